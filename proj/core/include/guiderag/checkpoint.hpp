// SPDX-License-Identifier: Apache-2.0
//
// Experiment-directory persistence: model checkpoints, closed-sets, configs and reports.
//
// Layout of a training run:
//   <out>/round_<i>/model_retriever.ckpt
//   <out>/round_<i>/model_guide.ckpt
//   <out>/round_<i>/model_generator.ckpt
//   <out>/round_<i>/closed_sets.jsonl
//   <out>/round_<i>/report.json      (report up to and including round i)
//   <out>/report.json                (final report)

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "guiderag/training.hpp"

namespace guiderag {

void save_models(const ModelSet& models, const std::filesystem::path& dir);
ModelSet load_models(const std::filesystem::path& dir);

void save_closed_sets(std::span<const ClosedSet> sets, const std::filesystem::path& path);
std::vector<ClosedSet> load_closed_sets(const std::filesystem::path& path);

std::string to_json(const TrainReport& report);
TrainReport train_report_from_json(std::string_view text);

std::string to_json(const TrainConfig& config);
/// Fields absent from `text` keep their value from `base`. Unknown keys are rejected.
TrainConfig train_config_from_json(std::string_view text, const TrainConfig& base = {});

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace guiderag
