// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relearn/diagnostics.hpp"
#include "relearn/eval.hpp"
#include "relearn/trainer.hpp"

namespace relearn {

using Json = nlohmann::ordered_json;

/// Every record starts with type, run_id, generation and epoch. Doubles are
/// printed with shortest round-trip precision, so records parse back exactly.
Json epoch_record(const std::string& run_id, const EpochRecord& r);
Json probe_record(const std::string& run_id, std::size_t generation, std::size_t epoch, const ProbeReport& r);
Json spectrum_record(const std::string& run_id, std::size_t generation, std::size_t epoch, const SpectrumReport& r);
Json transfer_record(const std::string& run_id, std::size_t generation, std::size_t epoch, const TransferResult& r);
Json fewshot_record(const std::string& run_id, std::size_t generation, std::size_t epoch, const FewShotConfig& config,
                    const FewShotResult& r);

/// One JSON object per line.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, bool append);
  void write(const Json& record);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

std::vector<Json> read_metrics(const std::filesystem::path& path);

}  // namespace relearn
