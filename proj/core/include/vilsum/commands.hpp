#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vilsum/metrics.hpp"

namespace vilsum {

// Batch entry points behind the CLI. Every command is deterministic given
// (inputs, seed, checkpoint), throws on failure, and keeps stdout for
// machine-readable output (diagnostics go to stderr). The run_* variants
// return the computed artifacts for library callers.

struct GendataOptions {
  std::filesystem::path out_dir;
  int docs = 0;
  long seed = 42;
};
void cmd_gendata(const GendataOptions& opt);

struct TrainOptions {
  std::filesystem::path data_dir;
  std::filesystem::path config_path;  // empty = all defaults
  std::filesystem::path out_ckpt;
  std::string mode_override;            // "" = keep config value
  std::string tasks_override;           // "" = keep config value
  std::filesystem::path resume_ckpt;    // empty = fresh run
};
void cmd_train(const TrainOptions& opt);

struct EvaluateOptions {
  std::filesystem::path data_dir;
  std::filesystem::path ckpt;
  std::filesystem::path report_path;
  std::filesystem::path config_path;   // optional: verify it matches the checkpoint
  std::filesystem::path details_path;  // optional: per-example JSONL
  bool gold_summaries = false;         // score the references against themselves
};

struct EvaluateResult {
  MetricReport report;
  float reorder_accuracy = 0.0f;
  float selection_f1 = 0.0f;
  int n_examples = 0;
};
std::string format_report(const EvaluateResult& res);
EvaluateResult run_evaluate(const EvaluateOptions& opt);
void cmd_evaluate(const EvaluateOptions& opt);

struct SummarizeOptions {
  std::filesystem::path ckpt;
  std::filesystem::path input;  // a single-record JSONL file
  int k = 3;
};
struct SummarizeResult {
  std::string summary;
  std::vector<std::string> image_paths;  // ranked selection
};
SummarizeResult run_summarize(const SummarizeOptions& opt);
void cmd_summarize(const SummarizeOptions& opt);

struct AlignmentOptions {
  std::filesystem::path ckpt;
  std::filesystem::path input;    // a single-record JSONL file
  std::filesystem::path out_csv;  // empty = do not write, just return
};
struct AlignmentResult {
  std::vector<std::string> row_ids;     // one per image
  std::vector<std::string> col_labels;  // para_0.. then sent_0..
  std::vector<std::vector<float>> matrix;
  int n_paragraph_cols = 0;

  /// Mean of cells (i, i) minus mean of all other cells in the
  /// image-by-paragraph block.
  float diagonal_gap() const;
};
AlignmentResult run_alignment(const AlignmentOptions& opt);
void cmd_alignment(const AlignmentOptions& opt);

}  // namespace vilsum
