#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oema/config.hpp"
#include "oema/evaluator.hpp"

namespace oema::cli {

// Fixed output layout under RunConfig::output_dir:
//   corpus/   self_annotated.jsonl, predictions.jsonl
//   index/    embeddings.jsonl
//   traces/   annotate_log.jsonl, predict_trace.jsonl
//   reports/  eval_exact.{json,txt}, eval_relaxed.{json,txt}, sweep.csv
//   cache/    per-role completion and embedding caches
//   sweep/    one subtree per (K, k) cell

void cmd_annotate(const RunConfig& config);
void cmd_predict(const RunConfig& config);

// regime: "exact", "relaxed" or "both".
void cmd_evaluate(const RunConfig& config, const std::filesystem::path& gold_path,
                  const std::filesystem::path& pred_path, const std::string& regime);

struct SweepRow {
    int K = 0;
    int k = 0;
    double exact_f1 = 0.0;
    double relaxed_f1 = 0.0;
};

std::vector<SweepRow> cmd_sweep(const RunConfig& config, const std::vector<int>& k_grid,
                                const std::vector<int>& K_grid);

// Entry point used by the oema binary.
int run_main(int argc, char** argv);

}  // namespace oema::cli
