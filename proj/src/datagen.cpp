#include "asmalign/datagen.hpp"

#include "asmalign/error.hpp"
#include "asmalign/hashing.hpp"
#include "asmalign/jsonl.hpp"
#include "asmalign/parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <set>

namespace asmalign {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

void append_folded(std::string& dst, std::string_view text) {
  text = trim(text);
  if (text.empty()) return;
  if (!dst.empty()) dst.push_back(' ');
  dst.append(text);
}

}  // namespace

std::string_view to_string(TaskType task) {
  switch (task) {
    case TaskType::simp: return "simp";
    case TaskType::detail: return "detail";
    case TaskType::conv: return "conv";
    case TaskType::reason: return "reason";
  }
  return "simp";
}

TaskType parse_task_type(std::string_view text) {
  for (auto t : kAllTasks) {
    if (to_string(t) == text) return t;
  }
  throw ValidationError("unknown task type '" + std::string(text) + "'");
}

std::vector<TaskType> parse_task_list(std::string_view text) {
  std::vector<TaskType> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find(',', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto item = trim(text.substr(pos, end - pos));
    if (!item.empty()) {
      const auto t = parse_task_type(item);
      if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    }
    pos = end + 1;
  }
  return out;
}

bool is_pretrain_task(TaskType task) { return task == TaskType::simp; }

const TaskTemplates& TemplateBank::at(TaskType task) const {
  const auto it = banks_.find(task);
  if (it == banks_.end()) throw ValidationError("no templates for task " + std::string(to_string(task)));
  return it->second;
}

void TemplateBank::set(TaskType task, TaskTemplates templates) { banks_[task] = std::move(templates); }

std::string TemplateBank::system_message(TaskType task) const {
  const auto& t = at(task);
  std::string out;
  for (const auto& shot : t.few_shot) {
    out += shot;
    out += "\n\n";
  }
  out += t.system_message;
  return out;
}

TemplateChoice select_template(const TemplateBank& bank, TaskType task, Rng& rng) {
  const auto& prompts = bank.at(task).user_prompts;
  if (prompts.empty()) throw ValidationError("empty prompt bank for task " + std::string(to_string(task)));
  const auto index = static_cast<std::size_t>(rng.uniform_index(prompts.size()));
  return {index, prompts[index]};
}

std::vector<ChatTurn> build_prompt(TaskType task, std::string_view user_prompt, std::string_view system,
                                   const AsmFunction& code, const std::optional<std::string>& description) {
  if (code.instructions.empty()) throw ValidationError("function " + code.id + " has no instructions");
  if (task != TaskType::simp && !description) {
    throw ValidationError(std::string(to_string(task)) + " prompt requires a description");
  }
  const std::string listing = render_instructions(code);
  std::string user(user_prompt);
  if (user.find("{asm}") != std::string::npos) {
    replace_all(user, "{description}", description.value_or(""));
    replace_all(user, "{asm}", listing);
  } else {
    user += " Here is the assembly code:<code>" + listing + "</code>.";
    if (description) user += " Here is the description of the code:" + *description + ".";
  }
  return {{ChatRole::system, std::string(system)}, {ChatRole::user, std::move(user)}};
}

std::vector<Round> parse_conversation(std::string_view raw) {
  std::vector<Round> rounds;
  enum class State { start, in_question, in_answer } state = State::start;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < raw.size()) {
    auto end = raw.find('\n', pos);
    if (end == std::string_view::npos) end = raw.size();
    const auto line = trim(raw.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;

    if (line.rfind("User:", 0) == 0) {
      if (state == State::in_question) {
        throw ParseError(line_no, "question without an AI answer");
      }
      rounds.push_back({});
      append_folded(rounds.back().question, line.substr(5));
      state = State::in_question;
    } else if (line.rfind("AI:", 0) == 0) {
      if (state != State::in_question) {
        throw ParseError(line_no, state == State::start ? "conversation must start with User:"
                                                        : "AI: answer without a question");
      }
      append_folded(rounds.back().answer, line.substr(3));
      state = State::in_answer;
    } else {
      if (state == State::start) throw ParseError(line_no, "conversation must start with User:");
      append_folded(state == State::in_question ? rounds.back().question : rounds.back().answer, line);
    }
  }
  if (state == State::in_question) throw ParseError(line_no, "question without an AI answer");
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    if (rounds[i].question.empty() || rounds[i].answer.empty()) {
      throw ParseError("round " + std::to_string(i + 1) + " has an empty question or answer");
    }
  }
  return rounds;
}

std::string render_conversation(const std::vector<Round>& rounds) {
  std::string out;
  for (const auto& r : rounds) {
    if (!out.empty()) out.push_back('\n');
    out += "User: " + r.question + "\nAI: " + r.answer;
  }
  return out;
}

std::vector<Round> InstructionSample::rounds() const {
  std::vector<Round> out;
  for (const auto& t : turns) {
    if (t.role == ChatRole::user) out.push_back({t.content, {}});
    if (t.role == ChatRole::assistant && !out.empty()) out.back().answer = t.content;
  }
  return out;
}

std::string sample_id(std::string_view function_id, TaskType task) {
  return std::string(function_id) + "#" + std::string(to_string(task));
}

void validate_sample(const InstructionSample& sample, std::size_t min_conv_rounds) {
  const auto fail = [&](const std::string& why) { throw ValidationError("sample " + sample.id + ": " + why); };
  std::size_t i = 0;
  if (!sample.turns.empty() && sample.turns[0].role == ChatRole::system) i = 1;
  std::size_t rounds = 0;
  for (; i < sample.turns.size(); ++i) {
    const auto& turn = sample.turns[i];
    if (turn.content.empty()) fail("empty turn content");
    const bool expect_user = ((i - (sample.turns[0].role == ChatRole::system ? 1 : 0)) % 2) == 0;
    if (turn.role != (expect_user ? ChatRole::user : ChatRole::assistant)) fail("turns do not alternate user/assistant");
    if (!expect_user) ++rounds;
  }
  if (sample.turns.empty() || sample.turns.back().role != ChatRole::assistant) fail("last turn must be an answer");
  if (sample.task == TaskType::conv && rounds < min_conv_rounds) {
    fail("conversation has " + std::to_string(rounds) + " rounds, needs at least " + std::to_string(min_conv_rounds));
  }
  if (sample.task == TaskType::simp) {
    if (rounds != 1) fail("simp samples hold exactly one round");
    if (sample.turns.back().content.find('\n') != std::string::npos) fail("simp answer spans multiple lines");
  }
}

GenerationResult generate_sample(ChatBackend& client, const AsmFunction& fn, TaskType task,
                                 const TemplateBank& bank, Rng& rng,
                                 const std::optional<std::string>& description,
                                 const GenerationOptions& options) {
  const auto choice = select_template(bank, task, rng);
  const auto request = build_prompt(task, choice.prompt, bank.system_message(task), fn,
                                    task == TaskType::simp ? std::nullopt : description);
  const auto completion =
      with_retries(options.max_attempts, [&](int attempt) { return client.complete(request, attempt); });

  InstructionSample sample;
  sample.id = sample_id(fn.id, task);
  sample.function_id = fn.id;
  sample.task = task;
  sample.provenance = {client.model_name(), choice.index, completion.cost_usd};

  const auto reject = [&](std::string why) -> GenerationResult {
    return RejectedSample{fn.id, task, std::move(why), completion.content, completion.cost_usd};
  };

  try {
    switch (task) {
      case TaskType::simp:
      case TaskType::detail: {
        const std::string answer(trim(completion.content));
        if (answer.empty()) return reject("empty completion");
        sample.turns = {{ChatRole::user, choice.prompt}, {ChatRole::assistant, answer}};
        break;
      }
      case TaskType::conv:
      case TaskType::reason: {
        const auto rounds = parse_conversation(completion.content);
        if (rounds.empty()) return reject("completion holds no User:/AI: rounds");
        for (const auto& r : rounds) {
          sample.turns.push_back({ChatRole::user, r.question});
          sample.turns.push_back({ChatRole::assistant, r.answer});
        }
        break;
      }
    }
    validate_sample(sample, options.min_conv_rounds);
  } catch (const ParseError& e) {
    return reject(std::string("parse error: ") + e.what());
  } catch (const ValidationError& e) {
    return reject(e.what());
  }
  return sample;
}

std::map<TaskType, std::size_t> Dataset::task_counts() const {
  std::map<TaskType, std::size_t> counts;
  for (const auto& s : samples) ++counts[s.task];
  return counts;
}

namespace {

Dataset assemble(const Corpus& corpus, std::vector<InstructionSample> samples, bool pretrain,
                 std::string name) {
  std::set<std::string> ids;
  std::set<std::string> functions;
  for (const auto& s : samples) {
    if (is_pretrain_task(s.task) != pretrain) {
      throw ValidationError("sample " + s.id + " has task " + std::string(to_string(s.task)) + ", not allowed in " +
                            name);
    }
    if (!corpus.find(s.function_id)) {
      throw IntegrityError("sample " + s.id + " references unknown function " + s.function_id);
    }
    if (!ids.insert(s.id).second) throw IntegrityError("duplicate sample id " + s.id);
    if (pretrain && !functions.insert(s.function_id).second) {
      throw IntegrityError("function " + s.function_id + " has more than one " + name + " sample");
    }
    validate_sample(s);
  }
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return Dataset{std::move(name), std::move(samples)};
}

ordered_json sample_to_json(const InstructionSample& s) {
  ordered_json j;
  j["id"] = s.id;
  j["function_id"] = s.function_id;
  j["task"] = std::string(to_string(s.task));
  ordered_json turns = ordered_json::array();
  for (const auto& t : s.turns) {
    ordered_json tj;
    tj["role"] = std::string(to_string(t.role));
    tj["content"] = t.content;
    turns.push_back(std::move(tj));
  }
  j["turns"] = std::move(turns);
  ordered_json p;
  p["backend_model"] = s.provenance.backend_model;
  p["template_index"] = s.provenance.template_index;
  p["cost_usd"] = s.provenance.cost_usd;
  j["provenance"] = std::move(p);
  return j;
}

InstructionSample sample_from_json(const ordered_json& j) {
  try {
    InstructionSample s;
    s.id = j.at("id").get<std::string>();
    s.function_id = j.at("function_id").get<std::string>();
    s.task = parse_task_type(j.at("task").get<std::string>());
    for (const auto& t : j.at("turns")) {
      s.turns.push_back({parse_chat_role(t.at("role").get<std::string>()), t.at("content").get<std::string>()});
    }
    const auto& p = j.at("provenance");
    s.provenance.backend_model = p.at("backend_model").get<std::string>();
    s.provenance.template_index = p.at("template_index").get<std::size_t>();
    s.provenance.cost_usd = p.at("cost_usd").get<double>();
    if (s.provenance.cost_usd < 0) throw SchemaError("negative cost in sample " + s.id);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed dataset record: ") + e.what());
  }
}

}  // namespace

Dataset assemble_d1(const Corpus& corpus, std::vector<InstructionSample> samples) {
  return assemble(corpus, std::move(samples), true, "D1");
}

Dataset assemble_d2(const Corpus& corpus, std::vector<InstructionSample> samples) {
  return assemble(corpus, std::move(samples), false, "D2");
}

std::string render_dataset(const Dataset& dataset) {
  JsonlDocument doc;
  doc.header["schema"] = "dataset/v1";
  doc.header["name"] = dataset.name;
  ordered_json counts = ordered_json::object();
  for (const auto& [task, n] : dataset.task_counts()) counts[std::string(to_string(task))] = n;
  doc.header["task_counts"] = std::move(counts);
  for (const auto& s : dataset.samples) doc.records.push_back(sample_to_json(s));
  return render_jsonl(doc);
}

Dataset parse_dataset(std::string_view text) {
  const auto doc = parse_jsonl(text);
  require_schema(doc.header, "dataset", 1);
  Dataset d;
  d.name = doc.header.value("name", std::string{});
  std::set<std::string> ids;
  for (const auto& r : doc.records) {
    d.samples.push_back(sample_from_json(r));
    if (!ids.insert(d.samples.back().id).second) throw IntegrityError("duplicate sample id " + d.samples.back().id);
  }
  if (doc.header.contains("task_counts")) {
    std::map<TaskType, std::size_t> declared;
    for (const auto& [k, v] : doc.header["task_counts"].items()) declared[parse_task_type(k)] = v.get<std::size_t>();
    if (declared != d.task_counts()) throw SchemaError("dataset task_counts do not match records");
  }
  return d;
}

void export_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_text_file(path, render_dataset(dataset));
}

Dataset import_dataset(const std::filesystem::path& path) { return parse_dataset(read_text_file(path)); }

std::string render_rejections(const std::vector<RejectedSample>& rejected) {
  JsonlDocument doc;
  doc.header["schema"] = "rejected/v1";
  doc.header["count"] = rejected.size();
  for (const auto& r : rejected) {
    ordered_json j;
    j["function_id"] = r.function_id;
    j["task"] = std::string(to_string(r.task));
    j["reason"] = r.reason;
    j["raw"] = r.raw;
    j["cost_usd"] = r.cost_usd;
    doc.records.push_back(std::move(j));
  }
  return render_jsonl(doc);
}

std::string_view to_string(CostCategory category) {
  switch (category) {
    case CostCategory::simp: return "simp";
    case CostCategory::reason: return "reason";
    case CostCategory::conv: return "conv";
    case CostCategory::detail: return "detail";
    case CostCategory::bcsd: return "bcsd";
  }
  return "simp";
}

CostCategory parse_cost_category(std::string_view text) {
  for (auto c : {CostCategory::simp, CostCategory::reason, CostCategory::conv, CostCategory::detail,
                 CostCategory::bcsd}) {
    if (to_string(c) == text) return c;
  }
  throw ValidationError("unknown cost category '" + std::string(text) + "'");
}

CostCategory cost_category(TaskType task) {
  switch (task) {
    case TaskType::simp: return CostCategory::simp;
    case TaskType::detail: return CostCategory::detail;
    case TaskType::conv: return CostCategory::conv;
    case TaskType::reason: return CostCategory::reason;
  }
  return CostCategory::simp;
}

void CostLedger::add(CostCategory category, double usd) {
  if (usd < 0) throw ValidationError("negative cost");
  entries.push_back({category, usd});
}

CostReport cost_report(const CostLedger& ledger) {
  std::map<CostCategory, double> totals;
  CostReport report;
  for (const auto& e : ledger.entries) {
    if (e.usd < 0) throw ValidationError("negative cost");
    totals[e.category] += e.usd;
    report.total += e.usd;
  }
  for (const auto& [category, usd] : totals) {
    report.lines.push_back({category, usd, report.total > 0 ? 100.0 * usd / report.total : 0.0});
  }
  return report;
}

std::string render_cost_table(const CostReport& report) {
  std::string out = fmt::format("{:<10} {:>12} {:>8}\n", "category", "usd", "percent");
  for (const auto& line : report.lines) {
    out += fmt::format("{:<10} {:>12.4f} {:>7.1f}%\n", to_string(line.category), line.usd, line.percent);
  }
  out += fmt::format("{:<10} {:>12.4f} {:>7.1f}%\n", "total", report.total, report.lines.empty() ? 0.0 : 100.0);
  return out;
}

nlohmann::ordered_json ledger_to_json(const CostLedger& ledger) {
  ordered_json j;
  j["schema"] = "ledger/v1";
  ordered_json entries = ordered_json::array();
  for (const auto& e : ledger.entries) {
    ordered_json ej;
    ej["category"] = std::string(to_string(e.category));
    ej["usd"] = e.usd;
    entries.push_back(std::move(ej));
  }
  j["entries"] = std::move(entries);
  return j;
}

CostLedger ledger_from_json(const nlohmann::json& j) {
  require_schema(ordered_json(j), "ledger", 1);
  CostLedger ledger;
  try {
    for (const auto& e : j.at("entries")) {
      ledger.add(parse_cost_category(e.at("category").get<std::string>()), e.at("usd").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed ledger: ") + e.what());
  }
  return ledger;
}

GenerationRun run_generation(ChatBackend& client, const Corpus& corpus, const TemplateBank& bank,
                             const GenerationConfig& config) {
  const auto wants = [&](TaskType t) {
    return std::find(config.tasks.begin(), config.tasks.end(), t) != config.tasks.end();
  };
  const bool any_d2 = wants(TaskType::detail) || wants(TaskType::conv) || wants(TaskType::reason);
  if (any_d2 && !wants(TaskType::simp)) {
    throw ValidationError("detail/conv/reason generation needs simp descriptions; include simp in the task list");
  }

  std::vector<const AsmFunction*> functions;
  for (const auto& fn : corpus.functions()) functions.push_back(&fn);
  std::sort(functions.begin(), functions.end(), [](auto* a, auto* b) { return a->id < b->id; });

  struct Job {
    const AsmFunction* fn;
    TaskType task;
    std::optional<GenerationResult> result;
  };

  const auto run_jobs = [&](std::vector<Job>& jobs, const std::map<std::string, std::string>& descriptions) {
    parallel_for(jobs.size(), config.max_in_flight, [&](std::size_t i) {
      auto& job = jobs[i];
      Rng rng(derive_seed(config.seed, fnv1a64(sample_id(job.fn->id, job.task))));
      std::optional<std::string> description;
      if (job.task != TaskType::simp) {
        const auto it = descriptions.find(job.fn->id);
        if (it == descriptions.end()) {
          job.result = RejectedSample{job.fn->id, job.task, "no accepted simp description", "", 0.0};
          return;
        }
        description = it->second;
      }
      try {
        job.result = generate_sample(client, *job.fn, job.task, bank, rng, description, config.options);
      } catch (const BackendError& e) {
        job.result = RejectedSample{job.fn->id, job.task, std::string("backend failure: ") + e.what(), "", 0.0};
      }
    });
  };

  GenerationRun run;
  std::vector<InstructionSample> d1_samples, d2_samples;
  std::map<std::string, std::string> descriptions;

  const auto collect = [&](std::vector<Job>& jobs) {
    for (auto& job : jobs) {
      if (auto* s = std::get_if<InstructionSample>(&*job.result)) {
        run.ledger.add(cost_category(s->task), s->provenance.cost_usd);
        if (s->task == TaskType::simp) {
          descriptions[s->function_id] = s->turns.back().content;
          d1_samples.push_back(std::move(*s));
        } else {
          d2_samples.push_back(std::move(*s));
        }
      } else {
        auto& r = std::get<RejectedSample>(*job.result);
        if (r.cost_usd > 0) run.ledger.add(cost_category(r.task), r.cost_usd);
        run.rejected.push_back(std::move(r));
      }
    }
  };

  if (wants(TaskType::simp)) {
    std::vector<Job> jobs;
    for (auto* fn : functions) jobs.push_back({fn, TaskType::simp, std::nullopt});
    run_jobs(jobs, descriptions);
    collect(jobs);
  }
  std::vector<Job> jobs;
  for (auto* fn : functions) {
    for (auto t : {TaskType::detail, TaskType::conv, TaskType::reason}) {
      if (wants(t)) jobs.push_back({fn, t, std::nullopt});
    }
  }
  run_jobs(jobs, descriptions);
  collect(jobs);

  run.d1 = assemble_d1(corpus, std::move(d1_samples));
  run.d2 = assemble_d2(corpus, std::move(d2_samples));
  return run;
}

}  // namespace asmalign
