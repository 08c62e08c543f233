#include "asmalign/cli.hpp"

#include "asmalign/backend.hpp"
#include "asmalign/bcsd.hpp"
#include "asmalign/bench.hpp"
#include "asmalign/datagen.hpp"
#include "asmalign/error.hpp"
#include "asmalign/experiment.hpp"
#include "asmalign/hashing.hpp"
#include "asmalign/ingest.hpp"
#include "asmalign/parallel.hpp"
#include "asmalign/report.hpp"
#include "asmalign/rule_backend.hpp"
#include "asmalign/toy.hpp"
#include "asmalign/train.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>
#include <spdlog/version.h>

#include <functional>
#include <map>
#include <memory>

namespace asmalign {
namespace {

namespace fs = std::filesystem;

// Everything a subcommand reads or writes, recorded for the manifest.
struct Run {
  ordered_json inputs = ordered_json::object();
  ordered_json outputs = ordered_json::object();
  ordered_json results = ordered_json::object();

  std::string read(const std::string& path) {
    auto text = read_text_file(path);
    inputs[path] = sha256_hex(text);
    return text;
  }

  void write(const std::string& path, std::string_view text) {
    write_text_file(path, text);
    outputs[path] = sha256_hex(text);
  }
};

ordered_json parse_json(std::string_view text, std::string_view path) {
  try {
    return ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path, e.what()));
  }
}

std::string sibling(const std::string& path, std::string_view suffix) {
  fs::path p(path);
  p.replace_extension();
  return p.string() + std::string(suffix);
}

std::string json_text(const ordered_json& j) { return j.dump(2) + "\n"; }

struct BackendOptions {
  std::string mode = "replay";
  std::string cache = "cache";
  std::string url;
  std::string chat_model = "gpt-4-turbo";
  std::string api_key_env = "ASMALIGN_API_KEY";
  std::size_t max_in_flight = 4;
};

void add_backend_options(CLI::App* app, BackendOptions& o) {
  app->add_option("--mode", o.mode, "live, record or replay; replay never touches the network")
      ->check(CLI::IsMember({"live", "record", "replay"}))
      ->capture_default_str();
  app->add_option("--cache", o.cache, "Request/response cache directory")->capture_default_str();
  app->add_option("--backend-url", o.url,
                  "OpenAI-compatible base URL, or 'rule' for the built-in offline backend");
  app->add_option("--chat-model", o.chat_model, "Chat model name sent to the backend")->capture_default_str();
  app->add_option("--api-key-env", o.api_key_env, "Environment variable holding the API key")
      ->capture_default_str();
  app->add_option("--max-in-flight", o.max_in_flight, "Concurrent backend requests")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

struct Backend {
  std::shared_ptr<JsonTransport> transport;
  std::shared_ptr<CachingTransport> cache;
};

Backend make_backend(const BackendOptions& o) {
  const auto mode = parse_cache_mode(o.mode);
  std::shared_ptr<JsonTransport> inner;
  if (mode == CacheMode::replay) {
    inner = std::make_shared<OfflineTransport>();
  } else if (o.url.empty()) {
    throw ValidationError(fmt::format("--mode {} needs --backend-url", o.mode));
  } else if (o.url == "rule") {
    inner = std::make_shared<RuleBasedTransport>();
  } else {
    inner = std::make_shared<HttpTransport>(o.url, o.api_key_env);
  }
  if (mode == CacheMode::live) return {inner, nullptr};
  auto cache = std::make_shared<CachingTransport>(inner, o.cache, mode);
  return {cache, cache};
}

void note_cache(Run& run, const Backend& b) {
  if (b.cache) run.results["cache"] = {{"hits", b.cache->hits()}, {"misses", b.cache->misses()}};
}

OpenAiChatBackend chat_client(const Backend& b, const BackendOptions& o) {
  ChatConfig cfg;
  cfg.model = o.chat_model;
  return OpenAiChatBackend(b.transport, cfg);
}

Model read_model(Run& run, const std::string& path) {
  return checkpoint_from_json(parse_json(run.read(path), path));
}

std::string model_label(const std::string& checkpoint) { return fs::path(checkpoint).filename().string(); }

// ---- ingest ----

struct IngestOptions {
  std::vector<std::string> listings;
  std::string format = "indexed";
  std::string project = "unknown";
  std::string opt = "O0";
  std::size_t min_len = 3;
  std::size_t cap = 0;
  std::uint64_t seed = 0;
  std::size_t toy = 0;
  std::string out;
};

void run_ingest(const IngestOptions& o, Run& run, std::ostream& out) {
  std::vector<AsmFunction> functions;
  const ListingDefaults defaults{o.project, parse_opt_level(o.opt)};
  for (const auto& path : o.listings) {
    auto parsed = ingest_listing(run.read(path), parse_listing_format(o.format), defaults);
    functions.insert(functions.end(), parsed.begin(), parsed.end());
  }
  if (o.toy > 0) {
    const auto toy = make_toy_corpus(o.toy, o.seed);
    functions.insert(functions.end(), toy.corpus.functions().begin(), toy.corpus.functions().end());
  }
  if (functions.empty()) throw ValidationError("nothing to ingest: pass --in or --toy");

  Corpus corpus = filter_min_length(Corpus(std::move(functions)), o.min_len);
  if (o.cap > 0) corpus = balance_sample(corpus, o.cap, o.seed);
  run.write(o.out, render_corpus(corpus));

  ordered_json projects = ordered_json::object();
  for (const auto& [name, share] : corpus.manifest().projects) projects[name] = share.count;
  run.results["functions"] = corpus.size();
  run.results["projects"] = projects;
  out << fmt::format("{} functions from {} projects -> {}\n", corpus.size(), projects.size(), o.out);
}

// ---- gen ----

struct GenOptions {
  std::string corpus;
  std::string tasks = "simp,detail,conv,reason";
  std::uint64_t seed = 0;
  std::vector<std::string> out;
  std::string ledger;
  std::string rejected;
  BackendOptions backend;
};

void run_gen(const GenOptions& o, Run& run, std::ostream& out, spdlog::logger& log) {
  if (o.out.size() != 2) throw ValidationError("--out takes two paths: d1.jsonl,d2.jsonl");
  const Corpus corpus = parse_corpus(run.read(o.corpus));
  const auto backend = make_backend(o.backend);
  auto client = chat_client(backend, o.backend);

  GenerationConfig cfg;
  cfg.tasks = parse_task_list(o.tasks);
  cfg.seed = o.seed;
  cfg.max_in_flight = o.backend.max_in_flight;
  const auto result = run_generation(client, corpus, TemplateBank::defaults(), cfg);
  note_cache(run, backend);

  run.write(o.out[0], render_dataset(result.d1));
  run.write(o.out[1], render_dataset(result.d2));
  run.write(o.ledger.empty() ? sibling(o.out[0], ".ledger.json") : o.ledger,
            json_text(ledger_to_json(result.ledger)));
  run.write(o.rejected.empty() ? sibling(o.out[0], ".rejected.jsonl") : o.rejected,
            render_rejections(result.rejected));
  if (!result.rejected.empty()) log.warn("{} samples rejected", result.rejected.size());

  ordered_json tasks = ordered_json::object();
  for (const auto& [task, n] : result.d2.task_counts()) tasks[std::string(to_string(task))] = n;
  double cost = 0.0;
  for (const auto& e : result.ledger.entries) cost += e.usd;
  run.results["d1"] = result.d1.samples.size();
  run.results["d2"] = tasks;
  run.results["rejected"] = result.rejected.size();
  run.results["cost_usd"] = cost;
  out << fmt::format("D1 {} samples, D2 {} samples, {} rejected, ${:.4f}\n", result.d1.samples.size(),
                     result.d2.samples.size(), result.rejected.size(), cost);
}

// ---- train ----

struct TrainOptions {
  std::string corpus;
  std::vector<std::string> data;
  std::string init;
  std::string out;
  std::string stage = "all";
  std::vector<std::string> drop_tasks;
  bool no_pretrain = false;
  bool no_finetune = false;
  bool no_encoder = false;
  bool two_tap = false;
  bool mlp_projector = false;
  ToyExperimentConfig hyper;
  std::size_t d_ff = 64;
  std::size_t layers = 1;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
};

ordered_json loss_summary(const TrainResult& r) {
  if (r.loss_curve.empty()) return nullptr;
  return {{"steps", r.loss_curve.size()}, {"first", r.loss_curve.front()}, {"last", r.loss_curve.back()}};
}

void run_train(const TrainOptions& o, Run& run, std::ostream& out) {
  const Corpus corpus = parse_corpus(run.read(o.corpus));
  Dataset d1{"d1", {}};
  Dataset d2{"d2", {}};
  for (const auto& path : o.data) {
    for (auto& s : parse_dataset(run.read(path)).samples) {
      (is_pretrain_task(s.task) ? d1 : d2).samples.push_back(std::move(s));
    }
  }
  for (const auto& t : o.drop_tasks) {
    const auto task = parse_task_type(t);
    if (is_pretrain_task(task)) throw ValidationError("--drop-task takes detail, conv or reason");
    d2 = without_task(d2, task);
  }

  auto steps1 = o.hyper.stage1_steps;
  auto steps2 = o.hyper.stage2_steps;
  if (o.steps > 0) {
    if (o.stage == "1") steps1 = o.steps;
    else if (o.stage == "2") steps2 = o.steps;
    else throw ValidationError("--steps needs --stage 1 or 2; use --steps1/--steps2 with --stage all");
  }
  const bool stage1 = o.stage != "2" && !o.no_pretrain;
  const bool stage2 = o.stage != "1" && !o.no_finetune;
  if (stage1 && d1.samples.empty()) throw ValidationError("stage 1 needs simp samples in --data");
  if (stage2 && d2.samples.empty()) throw ValidationError("stage 2 needs detail/conv/reason samples in --data");

  std::vector<Dataset> present;
  for (const auto* d : {&d1, &d2}) {
    if (!d->samples.empty()) present.push_back(*d);
  }

  TrainConfig base;
  base.batch_size = o.hyper.batch_size;
  base.clip_norm = o.hyper.clip_norm;
  base.seed = o.seed;

  Model model;
  if (!o.init.empty()) {
    model = read_model(run, o.init);
    if (o.no_encoder) model.config.no_encoder = true;
  } else {
    ModelConfig mc;
    mc.d_enc = o.hyper.d_enc;
    mc.d_model = o.hyper.d_model;
    mc.d_ff = o.d_ff;
    mc.layers = o.layers;
    mc.two_tap = o.two_tap;
    mc.projector_mlp = o.mlp_projector;
    mc.no_encoder = o.no_encoder;
    mc.seed = o.seed;
    model = init_model(mc, training_vocab(corpus, present));
    if (o.hyper.base_steps > 0 && !present.empty()) {
      TrainConfig c = base;
      c.steps = o.hyper.base_steps;
      c.lr = o.hyper.base_lr;
      run.results["base"] = loss_summary(train_base_decoder(model, corpus, present, c));
    }
  }
  if (stage1) {
    TrainConfig c = base;
    c.stage = Stage::pretrain;
    c.steps = steps1;
    c.lr = o.hyper.stage1_lr;
    run.results["stage1"] = loss_summary(train_stage1(model, corpus, d1, c));
  }
  if (stage2) {
    TrainConfig c = base;
    c.stage = Stage::finetune;
    c.steps = steps2;
    c.lr = o.hyper.stage2_lr;
    run.results["stage2"] = loss_summary(train_stage2(model, corpus, d2, c));
  }
  run.write(o.out, checkpoint_to_json(model).dump() + "\n");
  run.results["vocab"] = model.vocab.size();
  out << fmt::format("checkpoint -> {} (vocab {}, stage 1 {}, stage 2 {})\n", o.out, model.vocab.size(),
                     stage1 ? "run" : "skipped", stage2 ? "run" : "skipped");
}

// ---- ask ----

struct AskOptions {
  std::string model;
  std::string corpus;
  std::string function;
  std::vector<std::string> questions;
  std::string pack;
  std::string out;
  std::size_t max_new_tokens = 48;
  std::size_t max_in_flight = 4;
};

AsmFunction snippet_function(const BenchItem& item) {
  AsmFunction fn;
  fn.id = item.function_id;
  fn.source_key = item.function_id;
  for (std::size_t i = 0; i < item.code.size(); ++i) fn.instructions.push_back({i, item.code[i], std::nullopt});
  return fn;
}

void run_ask(const AskOptions& o, Run& run, std::ostream& out) {
  const Model model = read_model(run, o.model);
  std::optional<Corpus> corpus;
  if (!o.corpus.empty()) corpus = parse_corpus(run.read(o.corpus));

  if (o.pack.empty()) {
    if (!corpus || o.function.empty() || o.questions.empty()) {
      throw ValidationError("ask needs --corpus, --fn and --q (or --pack and --out)");
    }
    const auto answers = interactive_answer(model, corpus->at(o.function), o.questions, o.max_new_tokens);
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < answers.size(); ++i) {
      out << fmt::format("Q: {}\nA: {}\n", o.questions[i], answers[i]);
      rows.push_back({{"question", o.questions[i]}, {"answer", answers[i]}});
    }
    run.results["answers"] = rows;
    if (!o.out.empty()) run.write(o.out, json_text(rows));
    return;
  }

  if (o.out.empty()) throw ValidationError("--pack needs --out");
  const BenchPack pack = parse_bench_pack(run.read(o.pack));
  std::vector<std::string> answers(pack.items.size());
  parallel_for(pack.items.size(), o.max_in_flight, [&](std::size_t i) {
    const auto& item = pack.items[i];
    const AsmFunction fn = !item.code.empty() ? snippet_function(item)
                           : corpus           ? corpus->at(item.function_id)
                                              : throw ValidationError(fmt::format(
                                                    "item {} ships no code and no --corpus was given", item.id));
    const auto parts = interactive_answer(model, fn, item.questions, o.max_new_tokens);
    std::string joined;
    for (const auto& p : parts) joined += (joined.empty() ? "" : "\n") + p;
    answers[i] = std::move(joined);
  });
  AnswerSet set;
  for (std::size_t i = 0; i < pack.items.size(); ++i) set[pack.items[i].id] = answers[i];
  run.write(o.out, render_answers(set, model_label(o.model)));
  run.results["answers"] = set.size();
  out << fmt::format("{} answers -> {}\n", set.size(), o.out);
}

// ---- eval-bcsd ----

struct BcsdOptions {
  std::string corpus;
  std::string describe = "chat";
  std::string descriptions;
  std::string model;
  std::string question{kToyQuestion};
  std::string embedder = "local_hash";
  std::string embed_model = "text-embedding-3-small";
  std::vector<std::size_t> sizes{32, 50, 100, 200, 300, 500};
  std::string pairing = "O0:O3";
  std::size_t queries = 0;
  std::uint64_t seed = 0;
  bool cross_project = false;
  std::size_t truncate = kDefaultTruncation;
  std::string label = "run";
  std::string out;
  BackendOptions backend;
};

void run_eval_bcsd(const BcsdOptions& o, Run& run, std::ostream& out, spdlog::logger& log) {
  const Corpus corpus = parse_corpus(run.read(o.corpus));
  std::optional<Backend> backend;
  const auto need_backend = [&]() -> const Backend& {
    if (!backend) backend = make_backend(o.backend);
    return *backend;
  };

  DescriptionCorpus descriptions;
  if (o.describe == "file") {
    if (o.descriptions.empty()) throw ValidationError("--describe file needs --descriptions");
    descriptions = parse_descriptions(run.read(o.descriptions));
  } else {
    if (o.describe == "chat") {
      auto client = chat_client(need_backend(), o.backend);
      DescribeOptions d;
      d.truncation = o.truncate;
      d.max_in_flight = o.backend.max_in_flight;
      descriptions = describe_corpus(client, corpus, std::string(kDescribeTemplate), d);
      CostLedger ledger;
      ledger.add(CostCategory::bcsd, descriptions.cost_usd);
      run.write(sibling(o.out, ".ledger.json"), json_text(ledger_to_json(ledger)));
    } else {
      std::map<std::string, std::string> by_function;
      if (o.describe == "model") {
        if (o.model.empty()) throw ValidationError("--describe model needs --model");
        const Model model = read_model(run, o.model);
        const auto& fns = corpus.functions();
        std::vector<std::string> answers(fns.size());
        parallel_for(fns.size(), o.backend.max_in_flight, [&](std::size_t i) {
          answers[i] = interactive_answer(model, fns[i], {o.question}).front();
        });
        for (std::size_t i = 0; i < fns.size(); ++i) by_function[fns[i].id] = std::move(answers[i]);
        descriptions = descriptions_from_map(by_function, model_label(o.model), "model:" + o.question, o.truncate);
      } else {
        for (const auto& fn : corpus.functions()) by_function[fn.id] = verbatim_code(fn);
        descriptions = descriptions_from_map(by_function, "verbatim", "verbatim", o.truncate);
      }
    }
    run.write(o.descriptions.empty() ? sibling(o.out, ".descriptions.jsonl") : o.descriptions,
              render_descriptions(descriptions));
  }
  if (!descriptions.quarantined.empty()) log.warn("{} functions have no description", descriptions.quarantined.size());

  std::unique_ptr<EmbeddingBackend> embedder;
  if (o.embedder == "remote") {
    embedder = std::make_unique<RemoteEmbedder>(need_backend().transport, o.embed_model);
  } else {
    embedder = std::make_unique<LocalHashEmbedder>();
  }

  BcsdConfig cfg;
  cfg.label = o.label;
  cfg.max_in_flight = o.backend.max_in_flight;
  cfg.pools.sizes = o.sizes;
  cfg.pools.pairing = parse_pairing(o.pairing);
  cfg.pools.n_queries = o.queries;
  cfg.pools.seed = o.seed;
  cfg.pools.cross_project = o.cross_project;
  const auto report = run_bcsd(corpus, descriptions, *embedder, cfg);
  if (backend) note_cache(run, *backend);

  run.write(o.out, json_text(bcsd_report_to_json(report)));
  run.results["report"] = o.out;
  run.results["label"] = o.label;
  ordered_json recall = ordered_json::object();
  for (const auto& [size, v] : report.overall.recall_at_1) recall[std::to_string(size)] = v;
  run.results["recall_at_1"] = recall;
  run.results["quarantined"] = descriptions.quarantined.size();
  out << render_bcsd_table(report);
}

// ---- eval-bench ----

struct BenchOptions {
  std::string pack;
  std::string candidate;
  int trials = 3;
  std::string label = "run";
  std::string out;
  BackendOptions backend;
};

ordered_json verdict_json(const JudgeVerdict& v) {
  return {{"dims", v.dims}, {"rationale", v.rationale}};
}

void run_eval_bench(const BenchOptions& o, Run& run, std::ostream& out, spdlog::logger& log) {
  const BenchPack pack = parse_bench_pack(run.read(o.pack));
  for (const auto& w : pack_warnings(pack)) log.warn("{}", w);
  const AnswerSet answers = parse_answers(run.read(o.candidate));
  const auto backend = make_backend(o.backend);
  auto arbiter = chat_client(backend, o.backend);

  BenchRunOptions opts;
  opts.judge.trials = o.trials;
  opts.max_in_flight = o.backend.max_in_flight;
  opts.label = o.label;
  const auto result = run_bench(arbiter, pack, answers, opts);
  note_cache(run, backend);

  std::string details =
      ordered_json{{"schema", "verdicts/v1"}, {"judge", kJudgeTemplateVersion}, {"trials", o.trials}}.dump() + "\n";
  for (const auto& s : result.scored) {
    const auto& v = result.verdicts.at(s.item_id);
    ordered_json row;
    row["item_id"] = s.item_id;
    row["category"] = std::string(to_string(s.category));
    row["score"] = s.score;
    row["reference_answer"] = result.references.at(s.item_id);
    row["reference"] = verdict_json(v.reference);
    row["candidate"] = verdict_json(v.candidate);
    details += row.dump() + "\n";
  }
  run.write(sibling(o.out, ".verdicts.jsonl"), details);
  run.write(o.out, json_text(bench_report_to_json(result.report)));
  if (!result.report.quarantined.empty()) log.warn("{} items quarantined", result.report.quarantined.size());

  run.results["report"] = o.out;
  run.results["label"] = o.label;
  run.results["All"] = result.report.all.score;
  run.results["quarantined"] = result.report.quarantined.size();
  out << render_bench_table({result.report});
}

// ---- report ----

struct ReportOptions {
  std::vector<std::string> manifests;
  std::string reference_mrr;
  std::string reference_bench;
  std::string out;
  std::string json;
};

std::string result_path(const ordered_json& m, const std::string& manifest) {
  const auto& results = m.at("results");
  if (!results.contains("report") || !results["report"].is_string()) {
    throw SchemaError(fmt::format("manifest {} missing field 'results.report'", manifest));
  }
  return results["report"].get<std::string>();
}

void run_report(const ReportOptions& o, Run& run, std::ostream& out) {
  std::vector<BcsdReport> bcsd;
  std::vector<BenchReport> bench;
  std::string runs = "| Manifest | Command | Status |\n|---|---|---|\n";
  for (const auto& path : o.manifests) {
    const auto m = load_manifest(path);
    run.inputs[path] = sha256_hex(read_text_file(path));
    const auto command = m.at("command").get<std::string>();
    const auto status = m.at("status").get<std::string>();
    runs += fmt::format("| {} | {} | {} |\n", fs::path(path).filename().string(), command, status);
    if (status != "ok") throw ValidationError(fmt::format("manifest {} records a failed {} run", path, command));
    if (command == "eval-bcsd") {
      const auto report = result_path(m, path);
      bcsd.push_back(bcsd_report_from_json(parse_json(run.read(report), report)));
    } else if (command == "eval-bench") {
      const auto report = result_path(m, path);
      bench.push_back(bench_report_from_json(parse_json(run.read(report), report)));
    }
  }
  if (bcsd.empty() && bench.empty() && o.reference_mrr.empty() && o.reference_bench.empty()) {
    throw ValidationError("no completed evaluation run to report");
  }

  std::string md = "# Run summary\n\n";
  if (!o.manifests.empty()) md += "## Runs\n\n" + runs + "\n";
  if (!bcsd.empty()) {
    md += "## Retrieval\n\n" + render_recall_series(bcsd) + "\n";
    md += render_project_table(project_table_from_bcsd(bcsd)) + "\n";
  }
  if (!bench.empty()) {
    md += fmt::format("## Judge scores\n\nScore = {}\n\n", kScoreFormula) + render_bench_markdown(bench) + "\n";
  }
  if (!o.reference_mrr.empty() || !o.reference_bench.empty()) {
    md += "## Reference values\n\nPublished values rendered as given; nothing here is recomputed.\n\n";
    if (!o.reference_mrr.empty()) {
      md += render_project_table(project_table_from_json(parse_json(run.read(o.reference_mrr), o.reference_mrr))) +
            "\n";
    }
    if (!o.reference_bench.empty()) {
      md += render_bench_markdown(
                bench_rows_from_json(parse_json(run.read(o.reference_bench), o.reference_bench))) +
            "\n";
    }
  }
  run.write(o.out, md);

  if (!o.json.empty()) {
    ordered_json j;
    j["schema"] = "summary/v1";
    j["bcsd"] = ordered_json::array();
    for (const auto& r : bcsd) j["bcsd"].push_back(bcsd_report_to_json(r));
    j["bench"] = ordered_json::array();
    for (const auto& r : bench) j["bench"].push_back(bench_report_to_json(r));
    run.write(o.json, json_text(j));
  }
  run.results["bcsd_runs"] = bcsd.size();
  run.results["bench_runs"] = bench.size();
  out << md;
}

// ---- cost ----

struct CostOptions {
  std::vector<std::string> ledgers;
  std::string out;
};

void run_cost(const CostOptions& o, Run& run, std::ostream& out) {
  CostLedger merged;
  for (const auto& path : o.ledgers) {
    const auto ledger = ledger_from_json(parse_json(run.read(path), path));
    merged.entries.insert(merged.entries.end(), ledger.entries.begin(), ledger.entries.end());
  }
  const auto report = cost_report(merged);
  ordered_json j;
  j["schema"] = "cost-report/v1";
  j["total_usd"] = report.total;
  j["lines"] = ordered_json::array();
  for (const auto& l : report.lines) {
    j["lines"].push_back({{"category", std::string(to_string(l.category))}, {"usd", l.usd}, {"percent", l.percent}});
  }
  if (!o.out.empty()) run.write(o.out, json_text(j));
  run.results["total_usd"] = report.total;
  out << render_cost_table(report);
}

ordered_json versions() {
  return {{"asmalign", kVersion},
          {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                                        NLOHMANN_JSON_VERSION_PATCH)},
          {"fmt", fmt::format("{}", FMT_VERSION)},
          {"spdlog", fmt::format("{}.{}.{}", SPDLOG_VER_MAJOR, SPDLOG_VER_MINOR, SPDLOG_VER_PATCH)}};
}

struct Command {
  CLI::App* app = nullptr;
  std::function<void(Run&)> body;
  // Output the manifest is named after; empty falls back to <command>.manifest.json.
  std::function<std::string()> primary_output;
  std::string manifest;
};

}  // namespace

ordered_json load_manifest(const std::filesystem::path& path) {
  const auto j = parse_json(read_text_file(path), path.string());
  require_schema(j, "manifest", 1);
  for (const char* f : {"command", "status", "exit_code", "config_sha256", "inputs", "outputs", "results"}) {
    if (!j.contains(f)) throw SchemaError(fmt::format("manifest {} missing field '{}'", path.string(), f));
  }
  return j;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"asmalign: assembly-to-language alignment pipeline"};
  app.name("asmalign");
  app.set_version_flag("--version", std::string(kVersion));
  app.set_config("--config", "", "TOML config file; sections are subcommand names, flags override it");
  app.require_subcommand(1, 1);

  // Warnings go to the caller's error stream so tests can capture them.
  auto logger = std::make_shared<spdlog::logger>("asmalign", std::make_shared<spdlog::sinks::ostream_sink_st>(err));
  logger->set_pattern("%l: %v");

  std::map<std::string, Command> commands;
  const auto add = [&](const std::string& name, const std::string& help) -> Command& {
    auto& c = commands[name];
    c.app = app.add_subcommand(name, help);
    c.app->add_option("--manifest", c.manifest, "Manifest path (default <output>.manifest.json)");
    return c;
  };

  IngestOptions ingest;
  {
    auto& c = add("ingest", "Parse disassembly listings into a corpus");
    auto* s = c.app;
    s->add_option("--in,--listing", ingest.listings, "Listing file (repeatable)")->check(CLI::ExistingFile);
    s->add_option("--format", ingest.format, "indexed or addressed")
        ->check(CLI::IsMember({"indexed", "addressed"}))
        ->capture_default_str();
    s->add_option("--project", ingest.project, "Project for functions without one")->capture_default_str();
    s->add_option("--opt", ingest.opt, "Optimization level for functions without one")
        ->check(CLI::IsMember({"O0", "O1", "O2", "O3"}))
        ->capture_default_str();
    s->add_option("--min-len", ingest.min_len, "Drop functions with fewer instructions")->capture_default_str();
    s->add_option("--cap", ingest.cap, "Per-project cap, 0 for none")->capture_default_str();
    s->add_option("--seed", ingest.seed, "Sampling seed")->capture_default_str();
    s->add_option("--toy", ingest.toy, "Append a synthetic corpus with this many sources");
    s->add_option("--out", ingest.out, "Corpus file")->required();
    c.body = [&](Run& run) { run_ingest(ingest, run, out); };
    c.primary_output = [&] { return ingest.out; };
  }

  GenOptions gen;
  {
    auto& c = add("gen", "Generate instruction datasets D1 and D2");
    auto* s = c.app;
    s->add_option("--corpus", gen.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
    s->add_option("--tasks", gen.tasks, "Comma-separated tasks")->capture_default_str();
    s->add_option("--seed", gen.seed, "Template-selection seed")->capture_default_str();
    s->add_option("--out", gen.out, "d1.jsonl,d2.jsonl")->required()->delimiter(',')->expected(2);
    s->add_option("--ledger", gen.ledger, "Cost ledger (default <d1>.ledger.json)");
    s->add_option("--rejected", gen.rejected, "Rejected samples (default <d1>.rejected.jsonl)");
    add_backend_options(s, gen.backend);
    c.body = [&](Run& run) { run_gen(gen, run, out, *logger); };
    c.primary_output = [&] { return gen.out.empty() ? std::string() : gen.out.front(); };
  }

  TrainOptions train;
  {
    auto& c = add("train", "Train the toy model (stage 1, stage 2 or both)");
    auto* s = c.app;
    auto& h = train.hyper;
    s->add_option("--corpus", train.corpus, "Corpus the datasets refer to")->required()->check(CLI::ExistingFile);
    s->add_option("--data", train.data, "Dataset file (repeatable); simp samples feed stage 1, the rest stage 2")
        ->check(CLI::ExistingFile);
    s->add_option("--init", train.init, "Continue from this checkpoint instead of a fresh model");
    s->add_option("--stage", train.stage, "1, 2 or all")->check(CLI::IsMember({"1", "2", "all"}))->capture_default_str();
    s->add_option("--out", train.out, "Checkpoint file")->required();
    s->add_option("--drop-task", train.drop_tasks, "Remove a D2 task (repeatable)");
    s->add_flag("--no-pretrain", train.no_pretrain, "Skip stage 1");
    s->add_flag("--no-finetune", train.no_finetune, "Skip stage 2");
    s->add_flag("--no-encoder", train.no_encoder, "Replace code features with zeros");
    s->add_flag("--two-tap", train.two_tap, "Encoder emits pre- and post-final features");
    s->add_flag("--mlp-projector", train.mlp_projector, "Two-layer projector");
    s->add_option("--dim-enc", h.d_enc)->capture_default_str();
    s->add_option("--dim-model", h.d_model)->capture_default_str();
    s->add_option("--dim-ff", train.d_ff)->capture_default_str();
    s->add_option("--layers", train.layers)->capture_default_str();
    s->add_option("--batch", h.batch_size)->capture_default_str();
    s->add_option("--base-steps", h.base_steps, "Decoder-only warm-up steps on a fresh model")->capture_default_str();
    s->add_option("--base-lr", h.base_lr)->capture_default_str();
    s->add_option("--steps1", h.stage1_steps)->capture_default_str();
    s->add_option("--lr1", h.stage1_lr)->capture_default_str();
    s->add_option("--steps2", h.stage2_steps)->capture_default_str();
    s->add_option("--lr2", h.stage2_lr)->capture_default_str();
    s->add_option("--steps", train.steps, "Steps of the single stage selected by --stage");
    s->add_option("--clip", h.clip_norm, "Gradient norm clip, 0 disables")->capture_default_str();
    s->add_option("--seed", train.seed)->capture_default_str();
    c.body = [&](Run& run) { run_train(train, run, out); };
    c.primary_output = [&] { return train.out; };
  }

  AskOptions ask;
  {
    auto& c = add("ask", "Answer questions about a function with a trained checkpoint");
    auto* s = c.app;
    s->add_option("--model", ask.model, "Checkpoint file")->required()->check(CLI::ExistingFile);
    s->add_option("--corpus", ask.corpus, "Corpus holding --fn")->check(CLI::ExistingFile);
    s->add_option("--fn", ask.function, "Function id");
    s->add_option("--q", ask.questions, "Question (repeatable)");
    s->add_option("--pack", ask.pack, "Answer every item of a bench pack")->check(CLI::ExistingFile);
    s->add_option("--out", ask.out, "answers.jsonl for --pack, JSON otherwise");
    s->add_option("--max-new-tokens", ask.max_new_tokens)->capture_default_str();
    s->add_option("--max-in-flight", ask.max_in_flight)->check(CLI::PositiveNumber)->capture_default_str();
    c.body = [&](Run& run) { run_ask(ask, run, out); };
    c.primary_output = [&] { return ask.out; };
  }

  BcsdOptions bcsd;
  {
    auto& c = add("eval-bcsd", "Binary code similarity detection through descriptions");
    auto* s = c.app;
    s->add_option("--corpus", bcsd.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
    s->add_option("--describe", bcsd.describe, "chat, model, verbatim or file")
        ->check(CLI::IsMember({"chat", "model", "verbatim", "file"}))
        ->capture_default_str();
    s->add_option("--descriptions", bcsd.descriptions,
                  "Descriptions to read (file) or write (default <out>.descriptions.jsonl)");
    s->add_option("--model", bcsd.model, "Checkpoint for --describe model");
    s->add_option("--question", bcsd.question, "Question asked with --describe model")->capture_default_str();
    s->add_option("--backend", bcsd.embedder, "Embedding backend: local_hash or remote")
        ->check(CLI::IsMember({"local_hash", "remote"}))
        ->capture_default_str();
    s->add_option("--embed-model", bcsd.embed_model)->capture_default_str();
    s->add_option("--sizes", bcsd.sizes, "Pool sizes")->delimiter(',')->capture_default_str();
    s->add_option("--pairing", bcsd.pairing, "query:candidate optimization levels")->capture_default_str();
    s->add_option("--queries", bcsd.queries, "Queries per project, 0 for all")->capture_default_str();
    s->add_option("--seed", bcsd.seed)->capture_default_str();
    s->add_flag("--cross-project", bcsd.cross_project, "Draw distractors from every project");
    s->add_option("--truncate", bcsd.truncate, "Description length in tokens")->capture_default_str();
    s->add_option("--label", bcsd.label)->capture_default_str();
    s->add_option("--out", bcsd.out, "Report file")->required();
    add_backend_options(s, bcsd.backend);
    c.body = [&](Run& run) { run_eval_bcsd(bcsd, run, out, *logger); };
    c.primary_output = [&] { return bcsd.out; };
  }

  BenchOptions bench;
  {
    auto& c = add("eval-bench", "Judge candidate answers on a bench pack");
    auto* s = c.app;
    s->add_option("--pack", bench.pack, "Bench pack")->required()->check(CLI::ExistingFile);
    s->add_option("--candidate", bench.candidate, "answers.jsonl")->required()->check(CLI::ExistingFile);
    s->add_option("--trials", bench.trials, "Judge trials per item")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--label", bench.label)->capture_default_str();
    s->add_option("--out", bench.out, "Report file")->required();
    add_backend_options(s, bench.backend);
    c.body = [&](Run& run) { run_eval_bench(bench, run, out, *logger); };
    c.primary_output = [&] { return bench.out; };
  }

  ReportOptions report;
  {
    auto& c = add("report", "Combine run manifests into markdown and JSON tables");
    auto* s = c.app;
    s->add_option("--from", report.manifests, "Run manifest (repeatable)")->check(CLI::ExistingFile);
    s->add_option("--reference-mrr", report.reference_mrr, "Per-project MRR table to render as given")
        ->check(CLI::ExistingFile);
    s->add_option("--reference-bench", report.reference_bench, "Bench score table to render as given")
        ->check(CLI::ExistingFile);
    s->add_option("--out", report.out, "Markdown file")->required();
    s->add_option("--json", report.json, "JSON summary file");
    c.body = [&](Run& run) { run_report(report, run, out); };
    c.primary_output = [&] { return report.out; };
  }

  CostOptions cost;
  {
    auto& c = add("cost", "Merge cost ledgers into a breakdown");
    auto* s = c.app;
    s->add_option("--ledger", cost.ledgers, "Ledger file (repeatable)")->required()->check(CLI::ExistingFile);
    s->add_option("--out", cost.out, "JSON breakdown");
    c.body = [&](Run& run) { run_cost(cost, run, out); };
    c.primary_output = [&] { return cost.out; };
  }

  std::vector<const char*> argv{"asmalign"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    err << app.help();
    return kExitUsage;
  }

  const auto name = app.get_subcommands().front()->get_name();
  auto& cmd = commands.at(name);

  Run run;
  int code = kExitOk;
  std::string error;
  try {
    if (const auto* cfg = app.get_option("--config"); cfg->count() > 0) {
      const auto path = cfg->as<std::string>();
      run.inputs[path] = sha256_hex(read_text_file(path));
    }
    cmd.body(run);
  } catch (const std::exception& e) {
    code = kExitStageFailure;
    error = e.what();
    err << "error: " << error << "\n";
  }

  std::string manifest_path = cmd.manifest;
  if (manifest_path.empty()) {
    const auto primary = cmd.primary_output();
    manifest_path = primary.empty() ? name + ".manifest.json" : primary + ".manifest.json";
  }
  const auto config = cmd.app->config_to_str(true, false);
  ordered_json m;
  m["schema"] = "manifest/v1";
  m["command"] = name;
  m["status"] = code == kExitOk ? "ok" : "failed";
  m["exit_code"] = code;
  m["error"] = error.empty() ? ordered_json(nullptr) : ordered_json(error);
  m["config"] = config;
  m["config_sha256"] = sha256_hex(config);
  m["inputs"] = run.inputs;
  m["outputs"] = run.outputs;
  m["results"] = run.results;
  m["versions"] = versions();
  try {
    write_text_file(manifest_path, json_text(m));
  } catch (const std::exception& e) {
    err << "error: cannot write manifest: " << e.what() << "\n";
    code = kExitStageFailure;
  }
  return code;
}

}  // namespace asmalign
