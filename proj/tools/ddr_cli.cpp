#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ddr/errors.hpp"
#include "ddr/orchestrator.hpp"
#include "ddr/synthetic.hpp"
#include "json.hpp"

namespace {

using namespace ddr;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct CommonFlags {
  std::string config;
  std::string dataset;
  std::string eval_dataset;
  std::string output;
  std::string schedule;
  std::string topology;
  std::optional<std::uint64_t> seed;
  std::optional<int> rounds;
  std::string generator_ckpt;
  std::string refiner_ckpt;
  std::string summarizer_ckpt;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "run config file (default: $DDR_CONFIG)");
  cmd->add_option("--dataset", f.dataset, "training dataset (JSONL)");
  cmd->add_option("--eval-dataset", f.eval_dataset, "evaluation dataset (JSONL)");
  cmd->add_option("--output", f.output, "run directory");
  cmd->add_option("--seed", f.seed, "global seed");
  cmd->add_option("--rounds", f.rounds, "training rounds");
  cmd->add_option("--schedule", f.schedule, "gen-first | kr-first | independent");
  cmd->add_option("--topology", f.topology, "two-agent | three-agent");
  cmd->add_option("--generator-checkpoint", f.generator_ckpt, "toy generator checkpoint");
  cmd->add_option("--refiner-checkpoint", f.refiner_ckpt, "toy refiner checkpoint");
  cmd->add_option("--summarizer-checkpoint", f.summarizer_ckpt, "toy summarizer checkpoint");
}

// Precedence: flags, then the config file, then built-in defaults.
RunConfig resolve_config(const CommonFlags& f) {
  std::string path = f.config;
  if (path.empty())
    if (const char* env = std::getenv(kConfigEnv)) path = env;
  RunConfig c = path.empty() ? RunConfig{} : RunConfig::load(path);
  if (!f.dataset.empty()) c.dataset = f.dataset;
  if (!f.eval_dataset.empty()) c.eval_dataset = f.eval_dataset;
  if (!f.output.empty()) c.output_dir = f.output;
  if (!f.schedule.empty()) c.schedule = parse_schedule(f.schedule);
  if (!f.topology.empty()) c.topology = f.topology;
  if (f.seed) c.seed = *f.seed;
  if (f.rounds) c.rounds = *f.rounds;
  for (auto [role, ckpt] : {std::pair{"generator", &f.generator_ckpt}, std::pair{"refiner", &f.refiner_ckpt},
                            std::pair{"summarizer", &f.summarizer_ckpt}}) {
    if (ckpt->empty()) continue;
    auto it = c.modules.find(role);
    if (it == c.modules.end()) {
      it = c.modules.emplace(role, ModuleSpec{}).first;
    }
    it->second.kind = "toy";
    it->second.checkpoint = fs::path(*ckpt);
  }
  c.validate();
  return c;
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << content;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
  return out;
}

std::vector<int> parse_noise_range(const std::string& spec) {
  std::vector<int> out;
  try {
    if (auto dots = spec.find(".."); dots != std::string::npos) {
      const int lo = std::stoi(spec.substr(0, dots));
      const int hi = std::stoi(spec.substr(dots + 2));
      for (int n = lo; n <= hi; ++n) out.push_back(n);
    } else {
      out.push_back(std::stoi(spec));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("bad noise range '" + spec + "'");
  }
  if (out.empty()) throw ConfigError("empty noise range '" + spec + "'");
  for (int n : out)
    if (n < 0 || n > 4) throw ConfigError("noise count must be in 0..4");
  return out;
}

std::string report_line(const EvalReport& r) {
  ojson obj;
  obj["overall"] = r.overall();
  obj["mean_score"] = r.mean_score;
  obj["mean_length"] = r.mean_length;
  obj["count"] = r.count;
  obj["failures"] = r.failures;
  return obj.dump();
}

const QueryRecord& find_record(const std::vector<QueryRecord>& set, const std::string& id) {
  for (const auto& r : set)
    if (r.id == id) return r;
  throw DatasetError("no record with id '" + id + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ddr: rollout-reward preference training for retrieval-augmented agent pipelines"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CommonFlags common;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "validate a dataset or generate a synthetic one");
  std::string ingest_in, ingest_out;
  SyntheticOptions syn;
  std::optional<std::size_t> syn_records;
  ingest->add_option("--input", ingest_in, "dataset to validate and normalize");
  ingest->add_option("--synthetic", syn_records, "generate this many synthetic records");
  ingest->add_option("--docs", syn.docs_per_record, "documents per synthetic record");
  ingest->add_option("--entities", syn.entities, "synthetic entity count");
  ingest->add_option("--mentions", syn.answer_mentions, "answer mentions in the answer document");
  ingest->add_option("--miss-fraction", syn.miss_fraction, "fraction with the answer below the top 5");
  ingest->add_option("--synthetic-seed", syn.seed, "synthetic generator seed");
  ingest->add_option("--out", ingest_out, "output JSONL")->required();

  // mine-gen
  auto* mine_gen = app.add_subcommand("mine-gen", "sample and score generator candidates, emit pairs");
  add_common(mine_gen, common);
  std::string gen_out, gen_cands;
  mine_gen->add_option("--out", gen_out, "preference pairs JSONL")->required();
  mine_gen->add_option("--candidates", gen_cands, "all scored candidates JSONL");

  // mine-kr
  auto* mine_kr = app.add_subcommand("mine-kr", "score single-document rollouts, emit triplets");
  add_common(mine_kr, common);
  std::string kr_out;
  mine_kr->add_option("--out", kr_out, "triplets JSONL")->required();

  // train
  auto* train = app.add_subcommand("train", "train a toy module on mined data");
  add_common(train, common);
  std::string train_module = "generator", train_pairs, train_out, train_trace, objective = "dpo";
  std::optional<double> lr, beta;
  std::optional<int> epochs;
  std::optional<std::size_t> batch;
  train->add_option("--module", train_module, "generator | refiner")
      ->check(CLI::IsMember({"generator", "refiner"}));
  train->add_option("--pairs", train_pairs, "mined pairs (generator) or triplets (refiner)")->required();
  train->add_option("--objective", objective, "dpo | sft")->check(CLI::IsMember({"dpo", "sft"}));
  train->add_option("--out", train_out, "checkpoint to write")->required();
  train->add_option("--trace", train_trace, "per-step loss trace JSONL");
  train->add_option("--lr", lr, "learning rate");
  train->add_option("--beta", beta, "DPO beta");
  train->add_option("--epochs", epochs, "epochs");
  train->add_option("--batch-size", batch, "batch size (0 = full batch)");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate the pipeline");
  add_common(eval, common);
  std::string eval_out;
  bool no_rag = false;
  eval->add_flag("--no-rag", no_rag, "generator alone on the query");
  eval->add_option("--out", eval_out, "full report JSON");

  // scenario
  auto* scenario = app.add_subcommand("scenario", "Has-Answer / Miss-Answer / Internal-Knowledge breakdown");
  add_common(scenario, common);

  // noise-sweep
  auto* noise = app.add_subcommand("noise-sweep", "evaluate with n noisy documents in the top 5");
  add_common(noise, common);
  std::string noise_range = "0..4", noise_dir;
  noise->add_option("--n", noise_range, "noise count or range lo..hi");
  noise->add_option("--out-dir", noise_dir, "write one report per n here");

  // retention
  auto* retention = app.add_subcommand("retention", "fraction of records whose retained top 5 hold an answer");
  add_common(retention, common);

  // rollout-debug
  auto* debug = app.add_subcommand("rollout-debug", "show agent outputs and rollout rewards for one query");
  add_common(debug, common);
  std::string debug_id;
  debug->add_option("--query-id", debug_id, "record id")->required();

  // run
  auto* run = app.add_subcommand("run", "execute the full training schedule");
  add_common(run, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) {
      std::vector<QueryRecord> records;
      if (syn_records) {
        if (!ingest_in.empty()) throw ConfigError("--input and --synthetic are exclusive");
        syn.records = *syn_records;
        records = generate_synthetic(syn);
      } else if (!ingest_in.empty()) {
        records = load_dataset(ingest_in);
      } else {
        throw ConfigError("ingest needs --input or --synthetic");
      }
      save_dataset(ingest_out, records);
      std::cout << records.size() << " records -> " << ingest_out << "\n";
      return 0;
    }

    Orchestrator orch(resolve_config(common));

    if (mine_gen->parsed()) {
      const auto mined = orch.mine_generation(orch.train_set());
      std::string pairs, cands;
      for (const auto& p : mined.pairs) pairs += serialize_gen_pair(p) + "\n";
      write_file(gen_out, pairs);
      if (!gen_cands.empty()) {
        for (const auto& [id, list] : mined.candidates)
          for (const auto& c : list) cands += serialize_candidate(id, c) + "\n";
        write_file(gen_cands, cands);
      }
      std::cout << mined.pairs.size() << " pairs from " << mined.candidates.size() << " records\n";
    } else if (mine_kr->parsed()) {
      const auto mined = orch.mine_refiner(orch.train_set());
      std::string out;
      for (const auto& t : mined.triplets) out += serialize_triplet(t) + "\n";
      write_file(kr_out, out);
      std::cout << mined.triplets.size() << " triplets, " << mined.skipped << " records skipped\n";
    } else if (train->parsed()) {
      auto cfg = orch.config();
      auto& spec = cfg.modules[train_module].train;
      if (lr) spec.learning_rate = *lr;
      if (beta) spec.beta = *beta;
      if (epochs) spec.epochs = *epochs;
      if (batch) spec.batch_size = *batch;
      spec.validate();
      Orchestrator trainer(cfg);

      std::vector<PreferencePair> pairs;
      if (train_module == "generator") {
        for (const auto& line : read_lines(train_pairs)) pairs.push_back(parse_gen_pair(line));
      } else {
        std::vector<DocTriplet> triplets;
        for (const auto& line : read_lines(train_pairs)) triplets.push_back(parse_triplet(line, trainer.train_set()));
        pairs = trainer.refiner_pairs(triplets);
      }
      TrainResult result;
      if (objective == "sft") {
        std::vector<LabeledExample> examples;
        for (const auto& p : pairs) examples.push_back({p.context, p.chosen});
        result = trainer.train_module_sft(train_module, examples);
      } else {
        result = trainer.train_module(train_module, pairs);
      }
      save_checkpoint(train_out, trainer.toy(train_module));
      if (!train_trace.empty()) {
        std::string trace;
        for (const auto& e : result.trace) trace += serialize_trace_entry(e) + "\n";
        write_file(train_trace, trace);
      }
      std::cout << pairs.size() << " pairs, " << result.trace.size() << " steps";
      if (!result.trace.empty()) std::cout << ", final loss " << result.trace.back().loss;
      std::cout << "\n";
    } else if (eval->parsed()) {
      const auto report = evaluate(no_rag ? orch.no_rag_pipeline() : orch.pipeline(), orch.eval_set());
      if (!eval_out.empty()) write_file(eval_out, report.to_json() + "\n");
      std::cout << report_line(report) << "\n";
    } else if (scenario->parsed()) {
      const auto& data = orch.eval_set();
      const auto base = evaluate(orch.no_rag_pipeline(), data);
      const auto rag = evaluate(orch.pipeline(), data);
      const auto parts = partition_scenarios(data, base.outcomes, rag.outcomes);
      ojson out;
      for (auto [name, ids] : {std::pair{"has_answer", &parts.has_answer}, std::pair{"miss_answer", &parts.miss_answer},
                               std::pair{"internal_knowledge", &parts.internal_knowledge}}) {
        ojson row;
        row["count"] = ids->size();
        const auto a = subset_mean(base.outcomes, *ids);
        const auto b = subset_mean(rag.outcomes, *ids);
        row["no_rag"] = a ? ojson(*a) : ojson(nullptr);
        row["rag"] = b ? ojson(*b) : ojson(nullptr);
        out[name] = row;
      }
      std::cout << out.dump(2) << "\n";
    } else if (noise->parsed()) {
      const auto points = noise_sweep(orch.pipeline(), orch.eval_set(), parse_noise_range(noise_range),
                                      orch.config().seed);
      if (!noise_dir.empty())
        for (const auto& p : points)
          write_file(fs::path(noise_dir) / ("noise-n" + std::to_string(p.n) + ".eval.json"),
                     p.report.to_json() + "\n");
      std::cout << noise_table(points);
    } else if (retention->parsed()) {
      const Pipeline p = orch.pipeline();
      const double acc = refiner_retention_accuracy(p.node(p.find(AgentRole::Refine)), orch.eval_set());
      std::cout << acc << "\n";
    } else if (debug->parsed()) {
      const Pipeline p = orch.pipeline();
      const QueryRecord* rec = nullptr;
      try {
        rec = &find_record(orch.train_set(), debug_id);
      } catch (const DatasetError&) {
        rec = &find_record(orch.eval_set(), debug_id);
      }
      const auto trace = forward_trace(p, *rec);
      for (std::size_t t = 0; t < trace.size(); ++t) {
        ojson step;
        step["agent"] = t + 1;
        step["role"] = to_string(p.node(t + 1).role);
        if (const auto* docs = std::get_if<std::vector<Document>>(&trace[t])) {
          step["retained"] = ojson::array();
          for (const auto& d : *docs) step["retained"].push_back(d.doc_id);
        } else {
          step["output"] = std::get<std::string>(trace[t]);
        }
        std::cout << step.dump() << "\n";
      }
      const auto mined = mine_refiner_preferences(p, *rec, orch.config().kr_mining_docs);
      ojson rewards = ojson::object();
      for (const auto& [id, r] : mined.rewards) rewards[id] = r;
      std::cout << ojson{{"single_doc_rewards", rewards}}.dump() << "\n";
      std::cout << ojson{{"final_score", score(p.task_spec(rec->task), forward(p, *rec), rec->answers).value}}.dump()
                << "\n";
    } else if (run->parsed()) {
      const auto summary = orch.run();
      for (const auto& s : summary.stages) std::cout << "round " << s.round << " " << s.name << "\n";
      std::cout << "baseline " << report_line(summary.baseline) << "\n";
      std::cout << "final    " << report_line(summary.final_report) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "ddr: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
