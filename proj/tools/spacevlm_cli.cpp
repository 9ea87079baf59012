// spacevlm: command-line front end. Exit 0 ok, 1 usage, 2 data error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spacevlm/analysis.hpp"
#include "spacevlm/atomic_file.hpp"
#include "spacevlm/decomposer.hpp"
#include "spacevlm/eval.hpp"
#include "spacevlm/sha256.hpp"
#include "spacevlm/store.hpp"
#include "spacevlm/synth.hpp"

namespace fs = std::filesystem;
using namespace spacevlm;
using ojson = nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StorePaths {
  std::string store, manifest;
};

struct TextPaths {
  std::string store, manifest;
};

struct EvalOptions {
  double t = kDefaultThreshold;
  std::string variant = "slerp-center";
  std::string scorer = "negation-aware";
  std::vector<int> k{1, 5, 10};
  std::uint64_t seed = 0;
  std::string backend = "rules";
  std::string endpoint;
  std::string cache;
  int retries = 2;
  bool no_fallback = false;
  std::size_t threads = 1;
  bool per_query = false;

  EvalConfig config() const {
    EvalConfig c;
    try {
      c.threshold_t = t;
      c.variant = parse_variant(variant);
      c.scorer = parse_scorer(scorer);
      c.k_list = k;
      c.seed = seed;
      c.threads = threads;
      c.per_query = per_query;
      c.decomposer.backend = parse_backend(backend);
      if (!endpoint.empty()) c.decomposer.endpoint = endpoint;
      if (!cache.empty()) c.decomposer.cache_path = cache;
      c.decomposer.retries = retries;
      c.decomposer.fallback_to_rules = !no_fallback;
      c.decomposer.with_environment();
      c.validate();
      c.decomposer.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

void add_store(CLI::App* sub, StorePaths& p) {
  sub->add_option("--store", p.store, "image store vectors (.svec)")->required();
  sub->add_option("--manifest", p.manifest, "image store manifest (.json)")->required();
}

void add_text(CLI::App* sub, TextPaths& p) {
  sub->add_option("--text-store", p.store, "caption embedding vectors (.svec)")->required();
  sub->add_option("--text-manifest", p.manifest, "caption embedding manifest (.json)")->required();
}

void add_eval(CLI::App* sub, EvalOptions& o, bool with_t = true) {
  if (with_t) sub->add_option("--t", o.t, "cap threshold t in (-1, 1)")->capture_default_str();
  sub->add_option("--variant", o.variant, "slerp-center | eq3-literal")->capture_default_str();
  sub->add_option("--scorer", o.scorer, "negation-aware | plain | affirmative-only")->capture_default_str();
  sub->add_option("--seed", o.seed, "seed echoed into the report")->capture_default_str();
  sub->add_option("--backend", o.backend, "decomposer backend: rules | remote")->capture_default_str();
  sub->add_option("--endpoint", o.endpoint, "remote decomposer URL (or SPACEVLM_LLM_ENDPOINT)");
  sub->add_option("--decomposition-cache", o.cache, "decomposition cache file");
  sub->add_option("--retries", o.retries, "remote retries")->capture_default_str();
  sub->add_flag("--no-fallback", o.no_fallback, "fail instead of falling back to rules");
  sub->add_option("--threads", o.threads, "scoring threads")->capture_default_str()->check(CLI::PositiveNumber);
}

/// Writes to `out` atomically, or to stdout when `out` is empty.
void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
    std::cout.flush();
  } else {
    write_file_atomic(out, text);
  }
}

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

ojson store_json(const StorePaths& p) { return {{"vectors", p.store}, {"manifest", p.manifest}}; }

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!detail::trim(line).empty()) out.push_back(line);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct EvalCmd {
  StorePaths images;
  TextPaths text;
  EvalOptions opt;
  std::string tasks, out;
  bool mcq = false;

  void run() const {
    const EvalConfig cfg = opt.config();
    const auto store = read_store(images.store, images.manifest);
    const auto text_store = read_store(text.store, text.manifest);
    StoreTextEmbedder embed(text_store);
    EvalReport r = mcq ? run_mcq_eval(read_mcq_tasks(tasks), store, embed, cfg)
                       : run_retrieval_eval(read_retrieval_tasks(tasks), store, embed, cfg);
    ojson j;
    j["config"] = r.config;
    j["config"]["threads"] = cfg.threads;
    j["config"]["inputs"] = {{"store", store_json(images)},
                             {"text_store", {{"vectors", text.store}, {"manifest", text.manifest}}},
                             {"tasks", tasks}};
    const auto results = report_results_json(r);
    for (const auto& [key, value] : results.items()) j[key] = value;
    emit(out, dump(j));
  }
};

struct SweepCmd {
  StorePaths images;
  TextPaths text;
  EvalOptions opt;
  std::string tasks, out, csv, metric = "mcq-average";
  double t_min = 0.90, t_max = 0.95;
  std::size_t steps = 6;
  int k = 1;

  void run() const {
    const EvalConfig cfg = opt.config();
    SweepMetric m;
    try {
      m = parse_sweep_metric(metric);
      threshold_grid(t_min, t_max, steps);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    const bool is_mcq = m == SweepMetric::McqAverage || m == SweepMetric::McqNegation;
    const auto store = read_store(images.store, images.manifest);
    const auto text_store = read_store(text.store, text.manifest);
    StoreTextEmbedder embed(text_store);
    const SweepResult r =
        is_mcq ? threshold_sweep(read_mcq_tasks(tasks), store, embed, t_min, t_max, steps, cfg, m)
               : threshold_sweep(read_retrieval_tasks(tasks), store, embed, t_min, t_max, steps, cfg, k, m);
    ojson j;
    j["config"] = cfg.echo();
    j["config"].erase("threshold_t");
    j["config"]["metric"] = std::string(to_string(m));
    if (!is_mcq) j["config"]["k"] = k;
    j["config"]["t_min"] = t_min;
    j["config"]["t_max"] = t_max;
    j["config"]["steps"] = steps;
    j["config"]["inputs"] = {{"store", store_json(images)},
                             {"text_store", {{"vectors", text.store}, {"manifest", text.manifest}}},
                             {"tasks", tasks}};
    j["sweep"] = to_json(r);
    if (!csv.empty()) write_file_atomic(csv, sweep_csv(r));
    emit(out, dump(j));
  }
};

struct EntropyCmd {
  StorePaths images;
  TextPaths text;
  EvalOptions opt;
  std::string queries, out;
  std::size_t k = 5;

  void run() const {
    const EvalConfig cfg = opt.config();
    if (k < 1) throw UsageError("--top-k must be >= 1");
    const auto store = read_store(images.store, images.manifest);
    const auto text_store = read_store(text.store, text.manifest);
    StoreTextEmbedder embed(text_store);
    const auto r = entropy_for_captions(read_lines(queries), store, embed, cfg, k);
    ojson j;
    j["config"] = cfg.echo();
    j["config"]["top_k"] = k;
    j["config"]["inputs"] = {{"store", store_json(images)}, {"queries", queries}};
    const auto body = to_json(r);
    for (const auto& [key, value] : body.items()) j[key] = value;
    emit(out, dump(j));
  }
};

struct SynthCmd {
  BenchmarkSpec spec;
  std::string out_dir;

  void run() const {
    try {
      spec.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    const auto b = build_benchmark(spec);
    const fs::path dir(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
    write_store(b.images, dir / "images.svec", dir / "images.json");
    write_store(b.scenes, dir / "scenes.svec", dir / "scenes.json");
    write_store(b.text, dir / "text.svec", dir / "text.json");
    write_file_atomic(dir / "retrieval.jsonl", retrieval_tasks_text(b.retrieval));
    write_file_atomic(dir / "mcq.jsonl", mcq_tasks_text(b.mcq));
    write_file_atomic(dir / "divisibility.csv", histogram_csv(divisibility_histogram(b.images, b.text_anchors)));
    ojson j;
    j["labels"] = spec.labels;
    j["dim"] = spec.dim;
    j["spread"] = spec.spread;
    j["points_per_cluster"] = spec.points_per_cluster;
    j["seed"] = spec.seed;
    j["t_gen"] = spec.t_gen;
    j["text_shared_weight"] = spec.text_shared_weight;
    j["image_shared_weight"] = spec.image_shared_weight;
    j["mcq_per_template"] = spec.mcq_per_template;
    j["version"] = SPACEVLM_VERSION;
    j["min_center_angle"] = b.min_center_angle;
    j["separated"] = b.separated();
    j["counts"] = {{"images", b.images.size()},
                   {"scenes", b.scenes.size()},
                   {"retrieval_queries", b.retrieval.size()},
                   {"mcq_items", b.mcq.size()}};
    write_file_atomic(dir / "bench.json", dump(j));
    if (!b.separated()) {
      std::cerr << "warning: clusters are closer than 2 arccos(t_gen) + 6 spread; planted answers may overlap\n";
    }
  }
};

struct Statement1Cmd {
  std::vector<std::size_t> m{10, 100, 1000, 10000};
  std::size_t dim = 512, trials = 3;
  std::uint64_t seed = 1;
  std::string construction = "random", out;
  MarginSearch search;

  void run() const {
    MarginConstruction c;
    if (construction == "random") {
      c = MarginConstruction::Random;
    } else if (construction == "orthonormal") {
      c = MarginConstruction::Orthonormal;
    } else {
      throw UsageError("unknown construction '" + construction + "'");
    }
    ojson rows = ojson::array();
    bool all_hold = true;
    for (std::size_t i = 0; i < m.size(); ++i) {
      std::vector<MarginWitness> ws;
      try {
        ws = margin_empirical(m[i], dim, trials, derive_seed(seed, i), c, search);
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      for (const auto& w : ws) {
        all_hold = all_hold && w.holds();
        rows.push_back({{"m", w.m},
                        {"gamma", w.gamma},
                        {"gamma_raw", w.gamma_raw},
                        {"bound", w.bound},
                        {"empirical_best_margin", w.empirical_best_margin},
                        {"holds", w.holds()}});
      }
    }
    ojson j;
    j["config"] = {{"m", m},
                   {"dim", dim},
                   {"trials", trials},
                   {"seed", seed},
                   {"construction", std::string(to_string(c))},
                   {"restarts", search.restarts},
                   {"refine_candidates", search.refine_candidates},
                   {"refine_steps", search.refine_steps},
                   {"version", SPACEVLM_VERSION}};
    j["witnesses"] = std::move(rows);
    j["all_hold"] = all_hold;
    emit(out, dump(j));
  }
};

struct DecomposeCmd {
  EvalOptions opt;
  std::vector<std::string> captions;
  std::string input, out;

  void run() const {
    const EvalConfig cfg = opt.config();
    std::vector<std::string> all = captions;
    if (!input.empty()) {
      const auto lines = read_lines(input);
      all.insert(all.end(), lines.begin(), lines.end());
    }
    if (all.empty()) throw UsageError("give --caption or --input");
    Decomposer d(cfg.decomposer);
    std::string text;
    for (const auto& r : d.decompose_all(all)) text += to_json(r).dump() + "\n";
    emit(out, text);
  }
};

struct ExportCmd {
  TextPaths text;
  EvalOptions opt;
  std::string caption, out_vectors, out_manifest;

  void run() const {
    const EvalConfig cfg = opt.config();
    const auto text_store = read_store(text.store, text.manifest);
    export_query_vector(caption, StoreTextEmbedder(text_store), cfg, out_vectors, out_manifest);
  }
};

struct InfoCmd {
  StorePaths p;
  std::string out;

  void run() const {
    const auto s = read_store(p.store, p.manifest);
    std::size_t labeled = 0, captioned = 0;
    std::map<std::string, std::size_t> labels;
    for (const auto& it : s.items()) {
      labeled += it.labels.empty() ? 0 : 1;
      captioned += it.caption ? 1 : 0;
      if (!it.labels.empty()) ++labels[it.labels.front()];
    }
    ojson j;
    j["vectors"] = p.store;
    j["manifest"] = p.manifest;
    j["dim"] = s.dim();
    j["count"] = s.size();
    j["labeled"] = labeled;
    j["captioned"] = captioned;
    j["first_label_counts"] = labels;
    j["vector_sha256"] = sha256_hex(read_file(p.store));
    j["version"] = SPACEVLM_VERSION;
    emit(out, dump(j));
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Negation-aware embedding queries on the unit sphere"};
  app.set_version_flag("--version", SPACEVLM_VERSION);
  app.require_subcommand(1, 1);
  app.failure_message(CLI::FailureMessage::help);

  EvalCmd retrieve, mcq;
  mcq.mcq = true;
  for (auto* cmd : {&retrieve, &mcq}) {
    auto* sub = cmd->mcq ? app.add_subcommand("mcq", "multiple-choice accuracy per template")
                         : app.add_subcommand("retrieve", "Recall@K, affirmative and negated buckets");
    add_store(sub, cmd->images);
    add_text(sub, cmd->text);
    add_eval(sub, cmd->opt);
    sub->add_option("--tasks", cmd->tasks, "task file (.jsonl)")->required();
    if (!cmd->mcq) sub->add_option("--k", cmd->opt.k, "K values")->delimiter(',')->capture_default_str();
    sub->add_flag("--per-query", cmd->opt.per_query, "include per-query detail");
    sub->add_option("--out", cmd->out, "report path (default stdout)");
  }

  SweepCmd sweep;
  auto* sw = app.add_subcommand("sweep", "metric across a threshold grid");
  add_store(sw, sweep.images);
  add_text(sw, sweep.text);
  add_eval(sw, sweep.opt, false);
  sw->add_option("--tasks", sweep.tasks, "task file (.jsonl)")->required();
  sw->add_option("--metric", sweep.metric, "mcq-average | mcq-negation | recall-negated | recall-affirmative")
      ->capture_default_str();
  sw->add_option("--k", sweep.k, "K for recall metrics")->capture_default_str();
  sw->add_option("--t-min", sweep.t_min)->capture_default_str();
  sw->add_option("--t-max", sweep.t_max)->capture_default_str();
  sw->add_option("--steps", sweep.steps)->capture_default_str();
  sw->add_option("--csv", sweep.csv, "also write t,metric CSV");
  sw->add_option("--out", sweep.out, "report path (default stdout)");

  EntropyCmd entropy;
  auto* en = app.add_subcommand("entropy", "label entropy of top-k results");
  add_store(en, entropy.images);
  add_text(en, entropy.text);
  add_eval(en, entropy.opt);
  en->add_option("--queries", entropy.queries, "captions, one per line")->required();
  en->add_option("--top-k", entropy.k)->capture_default_str();
  en->add_option("--out", entropy.out, "report path (default stdout)");

  SynthCmd synth;
  auto* sy = app.add_subcommand("synth", "planted benchmark generator");
  sy->add_option("--labels", synth.spec.labels)->capture_default_str();
  sy->add_option("--dim", synth.spec.dim)->capture_default_str();
  sy->add_option("--spread", synth.spec.spread, "angular spread (rad)")->capture_default_str();
  sy->add_option("--points", synth.spec.points_per_cluster, "images per label")->capture_default_str();
  sy->add_option("--seed", synth.spec.seed)->capture_default_str();
  sy->add_option("--t-gen", synth.spec.t_gen, "threshold defining negated relevance")->capture_default_str();
  sy->add_option("--mcq-per-template", synth.spec.mcq_per_template)->capture_default_str();
  sy->add_option("--out-dir", synth.out_dir)->required();

  Statement1Cmd st;
  auto* s1 = app.add_subcommand("statement1", "single-vector margin vs. its bound");
  s1->add_option("--m", st.m, "set sizes")->delimiter(',')->capture_default_str();
  s1->add_option("--dim", st.dim)->capture_default_str();
  s1->add_option("--trials", st.trials)->capture_default_str();
  s1->add_option("--seed", st.seed)->capture_default_str();
  s1->add_option("--construction", st.construction, "random | orthonormal")->capture_default_str();
  s1->add_option("--restarts", st.search.restarts)->capture_default_str();
  s1->add_option("--out", st.out, "report path (default stdout)");

  DecomposeCmd dec;
  auto* de = app.add_subcommand("decompose", "split captions into affirmative and negated parts");
  add_eval(de, dec.opt, false);
  de->add_option("--caption", dec.captions, "caption (repeatable)");
  de->add_option("--input", dec.input, "captions, one per line");
  de->add_option("--out", dec.out, "JSONL path (default stdout)");

  ExportCmd ex;
  auto* xq = app.add_subcommand("export-query", "write one caption's scoring direction as a store");
  add_text(xq, ex.text);
  add_eval(xq, ex.opt);
  xq->add_option("--caption", ex.caption)->required();
  xq->add_option("--out-vectors", ex.out_vectors)->required();
  xq->add_option("--out-manifest", ex.out_manifest)->required();

  InfoCmd info;
  auto* si = app.add_subcommand("store-info", "summarize a store");
  add_store(si, info.p);
  si->add_option("--out", info.out, "report path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("retrieve")) retrieve.run();
    if (app.got_subcommand("mcq")) mcq.run();
    if (app.got_subcommand("sweep")) sweep.run();
    if (app.got_subcommand("entropy")) entropy.run();
    if (app.got_subcommand("synth")) synth.run();
    if (app.got_subcommand("statement1")) st.run();
    if (app.got_subcommand("decompose")) dec.run();
    if (app.got_subcommand("export-query")) ex.run();
    if (app.got_subcommand("store-info")) info.run();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
