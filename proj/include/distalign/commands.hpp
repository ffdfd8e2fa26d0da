#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "distalign/config.hpp"

namespace distalign {

// Exit codes shared by every subcommand.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int io = 2;
inline constexpr int vocab_mismatch = 3;
inline constexpr int training_failure = 4;
inline constexpr int report_mismatch = 5;
}  // namespace exit_code

// Writes pretrain.txt / heldout.txt (one sentence per line) and a manifest
// recording the seed and per-profession skew table.
int cmd_gen_corpus(const RunConfig& config);

// Builds the vocabulary from the data files, trains the toy model on the
// generated corpus, and writes base.ckpt plus the held-out loss curve.
int cmd_pretrain(const RunConfig& config);

// Scores the test split on the test templates against the configured target
// and writes bias_report JSON/CSV plus the association audit CSV. The
// profession/template split is persisted to split.json on first run and
// reused afterwards so later evaluations stay comparable.
int cmd_detect(const RunConfig& config, const std::filesystem::path& checkpoint,
               const std::string& report_name = "base");

// Multi-seed fine-tuning; writes per-seed checkpoints and history CSVs, the
// seed-averaged tuned report, and the summary table.
int cmd_mitigate(const RunConfig& config, const std::filesystem::path& checkpoint);

// Cross-product of the configured grids at seed 42; writes sweep.csv and the
// selected config.
int cmd_sweep(const RunConfig& config, const std::filesystem::path& checkpoint);

// Merges a base and a tuned bias report into the summary table; optionally
// turns a history CSV into a plot-ready epoch-vs-KL CSV.
int cmd_report(const RunConfig& config, const std::vector<std::filesystem::path>& reports,
               const std::optional<std::filesystem::path>& history_csv);

// The persisted profession/template split detect computes on first run and
// every later command reuses.
std::filesystem::path split_file_path(const RunConfig& config);
void write_split_file(const std::filesystem::path& path, const SplitAssignment& split,
                      const TemplatePartition& partition, std::uint64_t seed);
SplitAssignment read_split_file(const std::filesystem::path& path);

}  // namespace distalign
