#include "ddr/orchestrator.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ddr/errors.hpp"
#include "ddr/util.hpp"
#include "json.hpp"

namespace ddr {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string_view to_string(Schedule schedule) {
  switch (schedule) {
    case Schedule::GenFirst: return "gen-first";
    case Schedule::KrFirst: return "kr-first";
    case Schedule::Independent: return "independent";
  }
  return "gen-first";
}

Schedule parse_schedule(std::string_view name) {
  if (name == "gen-first") return Schedule::GenFirst;
  if (name == "kr-first") return Schedule::KrFirst;
  if (name == "independent") return Schedule::Independent;
  throw ConfigError("unknown schedule '" + std::string(name) + "'");
}

namespace {

const std::set<std::string> kRoles = {"refiner", "summarizer", "generator"};

ModuleSpec default_module(const std::string& role) {
  ModuleSpec m;
  if (role == "refiner") {
    m.init.biases = {{"<s>", "YES", 4.0}, {"YES", "</s>", 4.0}};
  } else {
    m.init.w_copy = 0.3;
  }
  return m;
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : obj.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("bad value for '") + key + "'");
    }
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

TrainConfig parse_train(const json& obj) {
  check_keys(obj, {"beta", "learning_rate", "epochs", "batch_size", "seed"}, "train");
  TrainConfig t;
  read(obj, "beta", t.beta);
  read(obj, "learning_rate", t.learning_rate);
  read(obj, "epochs", t.epochs);
  read(obj, "batch_size", t.batch_size);
  read(obj, "seed", t.seed);
  return t;
}

ModuleSpec parse_module(const std::string& role, const json& obj, const fs::path& base) {
  check_keys(obj, {"kind", "checkpoint", "init", "command", "timeout_ms", "train"}, "module " + role);
  ModuleSpec m = default_module(role);
  read(obj, "kind", m.kind);
  if (auto it = obj.find("checkpoint"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw ConfigError("checkpoint of " + role + " must be a path string");
    m.checkpoint = resolve(base, it->get<std::string>());
  }
  if (auto it = obj.find("init"); it != obj.end()) {
    check_keys(*it, {"w_copy", "count_cap", "eos_bias", "biases"}, "init of " + role);
    m.init = ToyInit{};
    read(*it, "w_copy", m.init.w_copy);
    read(*it, "count_cap", m.init.count_cap);
    read(*it, "eos_bias", m.init.eos_bias);
    if (auto b = it->find("biases"); b != it->end()) {
      if (!b->is_array()) throw ConfigError("biases of " + role + " must be an array");
      for (const auto& e : *b) {
        check_keys(e, {"prev", "next", "value"}, "bias of " + role);
        ToyInit::Bias bias;
        read(e, "prev", bias.prev);
        read(e, "next", bias.next);
        read(e, "value", bias.value);
        if (bias.prev.empty() || bias.next.empty()) throw ConfigError("bias of " + role + " needs prev and next");
        m.init.biases.push_back(std::move(bias));
      }
    }
  }
  read(obj, "command", m.command);
  read(obj, "timeout_ms", m.timeout_ms);
  if (auto it = obj.find("train"); it != obj.end()) m.train = parse_train(*it);
  return m;
}

}  // namespace

void RunConfig::validate() const {
  if (dataset.empty()) throw ConfigError("config needs a dataset");
  if (topology != "two-agent" && topology != "three-agent")
    throw ConfigError("unknown topology '" + topology + "'");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (refine_budget < 1 || generator_docs < 1 || kr_mining_docs < 1)
    throw ConfigError("document budgets must be >= 1");
  if (sampling.temperatures.empty() || sampling.rounds < 1)
    throw ConfigError("sampling needs temperatures and rounds >= 1");
  for (double t : sampling.temperatures)
    if (!(t > 0.0)) throw ConfigError("sampling temperatures must be positive");
  for (const auto& [tag, n] : max_tokens) {
    if (!is_known_task(tag)) throw ConfigError("max_tokens names unknown task '" + tag + "'");
    if (n < 1) throw ConfigError("max_tokens must be >= 1");
  }
  for (const auto& [role, m] : modules) {
    if (!kRoles.count(role)) throw ConfigError("unknown module role '" + role + "'");
    if (m.kind != "toy" && m.kind != "external")
      throw ConfigError("module " + role + " has unknown kind '" + m.kind + "'");
    if (m.kind == "external" && m.command.empty())
      throw ConfigError("external module " + role + " needs a command");
    m.train.validate();
  }
  for (const char* role : {"generator", "refiner"}) {
    auto it = modules.find(role);
    if (it != modules.end() && it->second.kind != "toy")
      throw ConfigError(std::string("trainable module ") + role + " must use the in-process toy adapter");
  }
}

RunConfig RunConfig::from_json(std::string_view text, const fs::path& base_dir) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(obj,
             {"dataset", "eval_dataset", "topology", "schedule", "rounds", "seed", "output_dir",
              "refine_budget", "generator_docs", "kr_mining_docs", "doc_token_budget", "sampling",
              "max_tokens", "instructions", "modules"},
             "config");
  RunConfig c;
  std::string s;
  if (read(obj, "dataset", s), !s.empty()) c.dataset = resolve(base_dir, s);
  s.clear();
  if (read(obj, "eval_dataset", s), !s.empty()) c.eval_dataset = resolve(base_dir, s);
  read(obj, "topology", c.topology);
  s.clear();
  if (read(obj, "schedule", s), !s.empty()) c.schedule = parse_schedule(s);
  read(obj, "rounds", c.rounds);
  read(obj, "seed", c.seed);
  s.clear();
  if (read(obj, "output_dir", s), !s.empty()) c.output_dir = resolve(base_dir, s);
  read(obj, "refine_budget", c.refine_budget);
  read(obj, "generator_docs", c.generator_docs);
  read(obj, "kr_mining_docs", c.kr_mining_docs);
  read(obj, "doc_token_budget", c.doc_token_budget);
  if (auto it = obj.find("sampling"); it != obj.end()) {
    check_keys(*it, {"temperatures", "rounds"}, "sampling");
    read(*it, "temperatures", c.sampling.temperatures);
    read(*it, "rounds", c.sampling.rounds);
  }
  read(obj, "max_tokens", c.max_tokens);
  if (auto it = obj.find("instructions"); it != obj.end()) {
    check_keys(*it, {"generate", "refine", "summarize"}, "instructions");
    read(*it, "generate", c.gen_instruction);
    read(*it, "refine", c.refine_instruction);
    read(*it, "summarize", c.summary_instruction);
  }
  if (auto it = obj.find("modules"); it != obj.end()) {
    if (!it->is_object()) throw ConfigError("modules must be an object");
    for (const auto& [role, spec] : it->items()) {
      if (!kRoles.count(role)) throw ConfigError("unknown module role '" + role + "'");
      c.modules[role] = parse_module(role, spec, base_dir);
    }
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), path.parent_path());
}

std::string RunConfig::to_json() const {
  ojson obj;
  obj["dataset"] = dataset.string();
  obj["eval_dataset"] = eval_dataset.string();
  obj["topology"] = topology;
  obj["schedule"] = to_string(schedule);
  obj["rounds"] = rounds;
  obj["seed"] = seed;
  obj["output_dir"] = output_dir.string();
  obj["refine_budget"] = refine_budget;
  obj["generator_docs"] = generator_docs;
  obj["kr_mining_docs"] = kr_mining_docs;
  obj["doc_token_budget"] = doc_token_budget;
  obj["sampling"] = {{"temperatures", sampling.temperatures}, {"rounds", sampling.rounds}};
  obj["max_tokens"] = max_tokens;
  obj["instructions"] = {{"generate", gen_instruction},
                         {"refine", refine_instruction},
                         {"summarize", summary_instruction}};
  ojson mods = ojson::object();
  for (const auto& [role, m] : modules) {
    ojson mo;
    mo["kind"] = m.kind;
    if (m.checkpoint) mo["checkpoint"] = m.checkpoint->string();
    ojson biases = ojson::array();
    for (const auto& b : m.init.biases) biases.push_back({{"prev", b.prev}, {"next", b.next}, {"value", b.value}});
    mo["init"] = {{"w_copy", m.init.w_copy}, {"count_cap", m.init.count_cap},
                   {"eos_bias", m.init.eos_bias}, {"biases", biases}};
    if (!m.command.empty()) mo["command"] = m.command;
    mo["timeout_ms"] = m.timeout_ms;
    mo["train"] = {{"beta", m.train.beta},
                   {"learning_rate", m.train.learning_rate},
                   {"epochs", m.train.epochs},
                   {"batch_size", m.train.batch_size},
                   {"seed", m.train.seed}};
    mods[role] = mo;
  }
  obj["modules"] = mods;
  return obj.dump(2);
}

// ---------------------------------------------------------------------------

namespace {

std::string strip_placeholders(std::string layout) {
  for (std::string p : {"{Documents}", "{Instruction}", "{Query}"})
    for (auto pos = layout.find(p); pos != std::string::npos; pos = layout.find(p))
      layout.replace(pos, p.size(), " ");
  return layout;
}

}  // namespace

Vocab build_run_vocab(const RunConfig& config, const std::vector<QueryRecord>& train,
                      const std::vector<QueryRecord>& eval) {
  std::vector<std::string> texts = {"YES", "NO", config.gen_instruction, config.refine_instruction,
                                    config.summary_instruction};
  for (const auto& t : {PromptTemplate::with_docs(""), PromptTemplate::query_only(""),
                        PromptTemplate::refine_judge("")}) {
    texts.push_back(strip_placeholders(t.layout));
    texts.push_back(strip_placeholders(t.fallback_layout));
  }
  for (const auto* set : {&train, &eval}) {
    for (const auto& r : *set) {
      texts.push_back(r.query);
      for (const auto& a : r.answers) texts.push_back(a);
      for (const auto& d : r.docs) texts.push_back(d.text);
    }
  }
  return Vocab::build(texts);
}

ToyPolicy make_toy_policy(const Vocab& vocab, const ToyInit& init) {
  ToyPolicyParams params(vocab.size(), init.w_copy, init.count_cap);
  for (TokenId v = 0; v < static_cast<TokenId>(vocab.size()); ++v)
    if (v != Vocab::kBos) params.at(v, Vocab::kEos) += init.eos_bias;
  for (const auto& b : init.biases) {
    if (!vocab.contains(b.prev) || !vocab.contains(b.next))
      throw ConfigError("bias references a token outside the vocabulary: " + b.prev + " -> " + b.next);
    params.at(vocab.id(b.prev), vocab.id(b.next)) += b.value;
  }
  return ToyPolicy(vocab, std::move(params));
}

Orchestrator::Orchestrator(RunConfig config) : config_(std::move(config)) {
  config_.validate();
  train_ = load_dataset(config_.dataset);
  eval_ = config_.eval_dataset.empty() ? train_ : load_dataset(config_.eval_dataset);

  std::vector<std::string> roles = {"refiner", "generator"};
  if (config_.topology == "three-agent") roles.insert(roles.begin() + 1, "summarizer");
  std::optional<Vocab> vocab;
  for (const auto& role : roles) {
    auto it = config_.modules.find(role);
    const ModuleSpec spec = it == config_.modules.end() ? default_module(role) : it->second;
    if (spec.kind == "external") {
      external_[role] = std::make_shared<ExternalAdapter>(spec.command,
                                                          std::chrono::milliseconds(spec.timeout_ms));
    } else if (spec.checkpoint) {
      toys_[role] = std::make_shared<const ToyPolicy>(load_checkpoint(*spec.checkpoint));
    } else {
      if (!vocab) vocab = build_run_vocab(config_, train_, eval_);
      toys_[role] = std::make_shared<const ToyPolicy>(make_toy_policy(*vocab, spec.init));
    }
  }
}

bool Orchestrator::is_toy(const std::string& role) const { return toys_.count(role) > 0; }

const ToyPolicy& Orchestrator::toy(const std::string& role) const {
  auto it = toys_.find(role);
  if (it == toys_.end()) throw ConfigError("module " + role + " is not an in-process toy policy");
  return *it->second;
}

void Orchestrator::set_toy(const std::string& role, ToyPolicy policy) {
  if (!is_toy(role)) throw ConfigError("module " + role + " is not an in-process toy policy");
  toys_[role] = std::make_shared<const ToyPolicy>(std::move(policy));
}

std::shared_ptr<Adapter> Orchestrator::adapter(const std::string& role) const {
  if (auto it = toys_.find(role); it != toys_.end()) return std::make_shared<InProcessAdapter>(it->second);
  if (auto it = external_.find(role); it != external_.end()) return it->second;
  throw ConfigError("no module for role " + role);
}

namespace {
void apply_settings(Pipeline& p, const RunConfig& c) {
  for (std::size_t t = 1; t <= p.size(); ++t) {
    AgentNode& node = p.node(t);
    node.prompt.doc_token_budget = c.doc_token_budget;
    switch (node.role) {
      case AgentRole::Refine: node.prompt.instruction = c.refine_instruction; break;
      case AgentRole::Summarize: node.prompt.instruction = c.summary_instruction; break;
      case AgentRole::Generate: node.prompt.instruction = c.gen_instruction; break;
    }
  }
  for (const auto& [tag, n] : c.max_tokens) {
    auto spec = TaskSpec::for_tag(tag);
    spec.max_generation_tokens = n;
    p.set_task_spec(spec);
  }
}
}  // namespace

Pipeline Orchestrator::pipeline() const {
  Pipeline p = config_.topology == "three-agent"
                   ? compose_three_agent(adapter("refiner"), adapter("summarizer"), adapter("generator"),
                                         config_.refine_budget, config_.generator_docs)
                   : compose_two_agent(adapter("refiner"), adapter("generator"), config_.refine_budget,
                                       config_.generator_docs);
  apply_settings(p, config_);
  return p;
}

Pipeline Orchestrator::no_rag_pipeline() const {
  AgentNode gen;
  gen.role = AgentRole::Generate;
  gen.adapter = adapter("generator");
  gen.prompt = PromptTemplate::query_only(config_.gen_instruction);
  std::vector<AgentNode> nodes;
  nodes.push_back(std::move(gen));
  Pipeline p(std::move(nodes));
  apply_settings(p, config_);
  return p;
}

GenMiningResult Orchestrator::mine_generation(const std::vector<QueryRecord>& records) const {
  const Pipeline p = pipeline();
  const std::size_t t = p.size();
  GenMiningResult out;
  for (const auto& record : records) {
    const auto refined = agent_input(p, t, record);
    auto candidates = sample_candidates(p, t, record, refined, config_.sampling, config_.seed);
    const std::string context = agent_prompt(p, t, refined, record);
    if (auto pair = mine_generation_pair(candidates, record.id, context)) out.pairs.push_back(std::move(*pair));
    out.candidates.emplace_back(record.id, std::move(candidates));
  }
  return out;
}

KrMiningResult Orchestrator::mine_refiner(const std::vector<QueryRecord>& records) const {
  const Pipeline p = pipeline();
  KrMiningResult out;
  for (const auto& record : records) {
    if (record.docs.size() < 2) {
      ++out.skipped;
      continue;
    }
    auto mined = mine_refiner_preferences(p, record, config_.kr_mining_docs);
    if (mined.triplet)
      out.triplets.push_back(std::move(*mined.triplet));
    else
      ++out.skipped;
  }
  return out;
}

std::vector<PreferencePair> Orchestrator::refiner_pairs(const std::vector<DocTriplet>& triplets) const {
  const Pipeline p = pipeline();
  const auto& judge = p.node(p.find(AgentRole::Refine)).prompt;
  std::vector<PreferencePair> pairs;
  for (const auto& t : triplets) {
    auto rec = std::find_if(train_.begin(), train_.end(), [&](const QueryRecord& r) { return r.id == t.query_id; });
    if (rec == train_.end()) rec = std::find_if(eval_.begin(), eval_.end(), [&](const QueryRecord& r) { return r.id == t.query_id; });
    if (rec == eval_.end()) throw DatasetError("triplet references unknown query '" + t.query_id + "'");
    for (auto& pair : triplet_to_dpo_pairs(t, *rec, judge)) pairs.push_back(std::move(pair));
  }
  return pairs;
}

TrainResult Orchestrator::train_module(const std::string& role, const std::vector<PreferencePair>& pairs) {
  const ToyPolicy& current = toy(role);
  const auto& spec = config_.modules.count(role) ? config_.modules.at(role).train : TrainConfig{};
  if (pairs.empty()) return TrainResult{current.params(), {}};
  std::vector<TokenizedPair> tokenized;
  tokenized.reserve(pairs.size());
  for (const auto& p : pairs) tokenized.push_back(tokenize(current.vocab(), p));
  auto result = train_dpo(current.params(), tokenized, spec);
  set_toy(role, ToyPolicy(current.vocab(), result.params));
  return result;
}

TrainResult Orchestrator::train_module_sft(const std::string& role,
                                           const std::vector<LabeledExample>& examples) {
  const ToyPolicy& current = toy(role);
  const auto& spec = config_.modules.count(role) ? config_.modules.at(role).train : TrainConfig{};
  if (examples.empty()) return TrainResult{current.params(), {}};
  std::vector<TokenizedExample> tokenized;
  for (const auto& e : examples) tokenized.push_back(tokenize(current.vocab(), e));
  auto result = train_sft(current.params(), tokenized, spec);
  set_toy(role, ToyPolicy(current.vocab(), result.params));
  return result;
}

std::vector<std::string> Orchestrator::round_stages(Schedule schedule) {
  switch (schedule) {
    case Schedule::GenFirst: return {"mine-gen", "train-gen", "mine-kr", "train-kr"};
    case Schedule::KrFirst: return {"mine-kr", "train-kr", "mine-gen", "train-gen"};
    case Schedule::Independent: return {"mine-gen", "mine-kr", "train-gen", "train-kr"};
  }
  return {};
}

namespace {

void write_new(const fs::path& path, const std::string& content) {
  if (fs::exists(path)) throw Error("refusing to overwrite existing artifact '" + path.string() + "'");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << content;
}

template <class Range, class Fn>
std::string lines(const Range& items, Fn fn) {
  std::string out;
  for (const auto& item : items) out += fn(item) + "\n";
  return out;
}

}  // namespace

RunSummary Orchestrator::run() {
  const fs::path root = config_.output_dir;
  fs::create_directories(root / "mined");
  fs::create_directories(root / "checkpoints");
  fs::create_directories(root / "reports");
  write_new(root / "config.json", config_.to_json() + "\n");

  RunSummary summary;
  for (const auto& [role, policy] : toys_)
    write_new(root / "checkpoints" / ("r0-" + role + ".ckpt"), checkpoint_to_string(*policy));
  summary.baseline = evaluate(pipeline(), eval_);
  write_new(root / "reports" / "r0-baseline.eval.json", summary.baseline.to_json() + "\n");
  summary.final_report = summary.baseline;

  int stage_no = 0;
  for (int round = 1; round <= config_.rounds; ++round) {
    std::vector<GenPreferencePair> gen_pairs;
    std::vector<DocTriplet> triplets;
    for (const auto& stage : round_stages(config_.schedule)) {
      ++stage_no;
      const std::string prefix = "r" + std::to_string(round) + "-s" + std::to_string(stage_no) + "-" + stage;
      StageRecord rec{round, stage, {}};
      try {
        if (stage == "mine-gen") {
          auto mined = mine_generation(train_);
          gen_pairs = std::move(mined.pairs);
          const fs::path pairs_path = root / "mined" / (prefix + ".pairs.jsonl");
          const fs::path cand_path = root / "mined" / (prefix + ".candidates.jsonl");
          write_new(pairs_path, lines(gen_pairs, [](const auto& p) { return serialize_gen_pair(p); }));
          std::string cands;
          for (const auto& [id, list] : mined.candidates)
            for (const auto& c : list) cands += serialize_candidate(id, c) + "\n";
          write_new(cand_path, cands);
          rec.artifacts = {pairs_path, cand_path};
        } else if (stage == "mine-kr") {
          triplets = mine_refiner(train_).triplets;
          const fs::path path = root / "mined" / (prefix + ".triplets.jsonl");
          write_new(path, lines(triplets, [](const auto& t) { return serialize_triplet(t); }));
          rec.artifacts = {path};
        } else {
          const bool gen = stage == "train-gen";
          const std::string role = gen ? "generator" : "refiner";
          std::vector<PreferencePair> pairs;
          if (gen) {
            for (const auto& p : gen_pairs) pairs.push_back(to_preference_pair(p));
          } else {
            pairs = refiner_pairs(triplets);
          }
          const auto result = train_module(role, pairs);
          const fs::path ckpt = root / "checkpoints" / (prefix + "-" + role + ".ckpt");
          const fs::path trace = root / "reports" / (prefix + ".trace.jsonl");
          const fs::path report = root / "reports" / (prefix + ".eval.json");
          write_new(ckpt, checkpoint_to_string(toy(role)));
          write_new(trace, lines(result.trace, [](const auto& e) { return serialize_trace_entry(e); }));
          summary.final_report = evaluate(pipeline(), eval_);
          write_new(report, summary.final_report.to_json() + "\n");
          rec.artifacts = {ckpt, trace, report};
        }
      } catch (const std::exception& e) {
        throw Error("stage " + prefix + " failed: " + e.what());
      }
      summary.stages.push_back(std::move(rec));
    }
  }
  return summary;
}

}  // namespace ddr
