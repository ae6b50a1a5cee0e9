// SPDX-License-Identifier: Apache-2.0

#include "guiderag/checkpoint.hpp"

#include <fstream>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace guiderag {

using ojson = nlohmann::ordered_json;

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

namespace {

template <typename Model>
void save_one(const Model& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  m.write(out);
}

template <typename Model>
Model load_one(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return Model::read(in);
}

}  // namespace

void save_models(const ModelSet& models, const std::filesystem::path& dir) {
  save_one(models.retriever, dir / "model_retriever.ckpt");
  save_one(models.guide, dir / "model_guide.ckpt");
  save_one(models.generator, dir / "model_generator.ckpt");
}

ModelSet load_models(const std::filesystem::path& dir) {
  ModelSet m;
  m.retriever = load_one<RetrieverModel>(dir / "model_retriever.ckpt");
  m.guide = load_one<RetrieverModel>(dir / "model_guide.ckpt");
  m.generator = load_one<GeneratorModel>(dir / "model_generator.ckpt");
  if (m.retriever.table.vocab_size() != m.generator.vocab_size() ||
      m.guide.table.vocab_size() != m.generator.vocab_size()) {
    throw InvalidArgument("checkpoints in " + dir.string() + " disagree on vocabulary size");
  }
  return m;
}

void save_closed_sets(std::span<const ClosedSet> sets, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  for (const auto& cs : sets) {
    out << ojson{{"example_id", cs.example_id},
                 {"retriever_ids", cs.retriever_ids},
                 {"guide_ids", cs.guide_ids},
                 {"union_ids", cs.union_ids}}
               .dump()
        << '\n';
  }
}

std::vector<ClosedSet> load_closed_sets(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  std::vector<ClosedSet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = ojson::parse(line);
      ClosedSet cs;
      cs.example_id = j.at("example_id").get<ExampleId>();
      cs.retriever_ids = j.at("retriever_ids").get<std::vector<PassageId>>();
      cs.guide_ids = j.at("guide_ids").get<std::vector<PassageId>>();
      cs.union_ids = j.at("union_ids").get<std::vector<PassageId>>();
      out.push_back(std::move(cs));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string to_json(const TrainReport& report) {
  ojson j;
  j["rounds"] = ojson::array();
  for (const auto& r : report.rounds) {
    ojson jr{{"round", r.round},
             {"alpha", r.alpha},
             {"closed_sets", r.closed_sets},
             {"mean_union_size", r.mean_union_size}};
    jr["epochs"] = ojson::array();
    for (const auto& e : r.epochs) {
      jr["epochs"].push_back({{"epoch", e.epoch},
                              {"objective", e.objective},
                              {"expected_log_likelihood", e.expected_log_likelihood},
                              {"kl", e.kl}});
    }
    jr["audit"] = {{"draws_from_retriever", r.audit.draws_from_retriever},
                   {"draws_from_guide", r.audit.draws_from_guide},
                   {"outside_retriever_set", r.audit.outside_retriever_set},
                   {"outside_guide_set", r.audit.outside_guide_set}};
    j["rounds"].push_back(std::move(jr));
  }
  if (report.convergence) {
    const auto& c = *report.convergence;
    ojson jc;
    jc["epochs"] = ojson::array();
    for (const auto& e : c.epochs) {
      jc["epochs"].push_back({{"epoch", e.epoch},
                              {"retriever_objective", e.retriever_objective},
                              {"generator_objective", e.generator_objective},
                              {"retriever_active", e.retriever_active},
                              {"generator_active", e.generator_active}});
    }
    jc["retriever_stopped_epoch"] =
        c.retriever_stopped_epoch ? ojson(*c.retriever_stopped_epoch) : ojson(nullptr);
    jc["generator_stopped_epoch"] =
        c.generator_stopped_epoch ? ojson(*c.generator_stopped_epoch) : ojson(nullptr);
    j["convergence"] = std::move(jc);
  }
  j["checkpoints"] = report.checkpoints;
  return j.dump(2) + "\n";
}

TrainReport train_report_from_json(std::string_view text) {
  try {
    const auto j = ojson::parse(text);
    TrainReport report;
    for (const auto& jr : j.at("rounds")) {
      RoundRecord r;
      r.round = jr.at("round").get<std::size_t>();
      r.alpha = jr.at("alpha").get<double>();
      r.closed_sets = jr.at("closed_sets").get<std::size_t>();
      r.mean_union_size = jr.at("mean_union_size").get<double>();
      for (const auto& je : jr.at("epochs")) {
        r.epochs.push_back({je.at("epoch").get<std::size_t>(), je.at("objective").get<double>(),
                            je.at("expected_log_likelihood").get<double>(), je.at("kl").get<double>()});
      }
      const auto& ja = jr.at("audit");
      r.audit.draws_from_retriever = ja.at("draws_from_retriever").get<std::size_t>();
      r.audit.draws_from_guide = ja.at("draws_from_guide").get<std::size_t>();
      r.audit.outside_retriever_set = ja.at("outside_retriever_set").get<std::size_t>();
      r.audit.outside_guide_set = ja.at("outside_guide_set").get<std::size_t>();
      report.rounds.push_back(std::move(r));
    }
    if (auto it = j.find("convergence"); it != j.end()) {
      ConvergenceRecord c;
      for (const auto& je : it->at("epochs")) {
        c.epochs.push_back({je.at("epoch").get<std::size_t>(),
                            je.at("retriever_objective").get<double>(),
                            je.at("generator_objective").get<double>(),
                            je.at("retriever_active").get<bool>(),
                            je.at("generator_active").get<bool>()});
      }
      if (!it->at("retriever_stopped_epoch").is_null()) {
        c.retriever_stopped_epoch = it->at("retriever_stopped_epoch").get<std::size_t>();
      }
      if (!it->at("generator_stopped_epoch").is_null()) {
        c.generator_stopped_epoch = it->at("generator_stopped_epoch").get<std::size_t>();
      }
      report.convergence = std::move(c);
    }
    report.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed training report: ") + e.what());
  }
}

std::string to_json(const TrainConfig& c) {
  ojson j{{"rounds", c.rounds},
          {"r", c.r},
          {"inner_epochs", c.inner_epochs},
          {"learning_rate", c.learning_rate},
          {"alpha_schedule", c.alpha_schedule},
          {"objective", std::string(to_string(c.objective))},
          {"elbo_sample_k", c.elbo_sample_k},
          {"marginalized_k", c.marginalized_k},
          {"temperature", c.temperature},
          {"seed", c.seed},
          {"convergence", {{"patience", c.convergence.patience}, {"min_delta", std::isinf(c.convergence.min_delta) ? ojson("inf") : ojson(c.convergence.min_delta)}}},
          {"minibatch_size", c.minibatch_size},
          {"joint_guide", c.joint_guide},
          {"dim", c.dim},
          {"convergence_phase", c.convergence_phase},
          {"max_convergence_epochs", c.max_convergence_epochs},
          {"threads", c.threads}};
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(std::string_view text, const TrainConfig& base) {
  TrainConfig c = base;
  try {
    const auto j = ojson::parse(text);
    if (!j.is_object()) throw InvalidArgument("training config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "rounds") c.rounds = value.get<std::size_t>();
      else if (key == "r") c.r = value.get<std::size_t>();
      else if (key == "inner_epochs") c.inner_epochs = value.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "alpha_schedule") c.alpha_schedule = value.get<std::vector<double>>();
      else if (key == "objective") c.objective = parse_objective_kind(value.get<std::string>());
      else if (key == "elbo_sample_k") c.elbo_sample_k = value.get<std::size_t>();
      else if (key == "marginalized_k") c.marginalized_k = value.get<std::size_t>();
      else if (key == "temperature") c.temperature = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "convergence") {
        for (const auto& [ck, cv] : value.items()) {
          if (ck == "patience") c.convergence.patience = cv.get<std::size_t>();
          else if (ck == "min_delta") {
            // JSON has no infinity; accept the string "inf".
            c.convergence.min_delta = cv.is_string() && cv.get<std::string>() == "inf"
                                          ? std::numeric_limits<double>::infinity()
                                          : cv.get<double>();
          } else throw InvalidArgument("unknown convergence key '" + ck + "'");
        }
      }
      else if (key == "minibatch_size") c.minibatch_size = value.get<std::size_t>();
      else if (key == "joint_guide") c.joint_guide = value.get<bool>();
      else if (key == "dim") c.dim = value.get<std::size_t>();
      else if (key == "convergence_phase") c.convergence_phase = value.get<bool>();
      else if (key == "max_convergence_epochs") c.max_convergence_epochs = value.get<std::size_t>();
      else if (key == "threads") c.threads = value.get<std::size_t>();
      else throw InvalidArgument("unknown training config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace guiderag
