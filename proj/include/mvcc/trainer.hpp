#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mvcc/augment.hpp"
#include "mvcc/config.hpp"
#include "mvcc/data.hpp"
#include "mvcc/losses.hpp"
#include "mvcc/model.hpp"

namespace mvcc {

enum class Variant { kFull, kNoCC, kNCE, kNoViewCoherentCutMix, kSameGeometricAug, kSupervisedOnly };

std::string to_string(Variant v);
/// Accepts the snake_case names: full, no_cc, nce, no_view_coherent_cutmix,
/// same_geometric_aug, supervised_only.
Variant parse_variant(const std::string& name);

enum class CorrelationTarget {
  kPseudoLabel,   // averaged teacher probabilities shared by both views
  kOppositeView,  // teacher probabilities of the other view
};

struct TrainConfig {
  /// Directory written by gen-data; empty means generate `dataset` in memory.
  std::string data_dir;
  DatasetConfig dataset;
  std::size_t batch_labeled = 4;
  std::size_t batch_unlabeled = 4;
  double base_lr = 0.2;
  double feature_lr_mult = 0.1;
  double momentum = 0.9;
  double poly_power = 0.9;
  std::size_t steps = 3000;
  double ema_momentum = 0.99;
  LossWeights weights;
  /// Steps over which w_U and w_CC ramp linearly from 0; 0 disables.
  std::size_t unsup_warmup = 0;
  std::size_t num_samples = 256;
  double label_smoothing = 0.1;
  double tau = 0.1;
  Variant variant = Variant::kFull;
  CorrelationTarget cc_target = CorrelationTarget::kPseudoLabel;
  double eta = 0.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 500;
  SegNetConfig model;
  AugmentConfig augment;

  void validate() const;
  static TrainConfig from_config(const KeyValueConfig& kv);
  /// Flat `key = value` text that from_config reads back to the same config.
  std::string to_text() const;
};

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS; training allocates and frees many large short-lived buffers. No-op
/// outside glibc.
void configure_allocator();

double poly_lr(double base, std::size_t step, std::size_t total, double power);

/// Parameter-wise SGD with momentum: v ← μ·v + g, θ ← θ − lr·v. Parameters of
/// the feature extractor use lr·feature_lr_mult. Missing gradients count as 0.
void sgd_momentum_step(SegNet& net, std::vector<std::vector<double>>& velocities, double lr, double momentum,
                       double feature_lr_mult);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double l_sup = 0.0;
  double l_unsup = 0.0;
  double l_cc = 0.0;  // InfoNCE for the nce variant
  double total = 0.0;
};

struct EvalPoint {
  std::size_t step = 0;
  double miou = 0.0;
};

struct RunRecord {
  std::vector<StepRecord> steps;
  std::vector<EvalPoint> evals;
  double final_miou = 0.0;
  double wall_seconds = 0.0;
  std::string config_text;
  /// "ok", or a diagnostic when the run aborted.
  std::string status = "ok";

  bool ok() const { return status == "ok"; }
  StepRecord mean_losses() const;
};

struct TrainState {
  SegNet student;
  EmaTeacher teacher;
  std::vector<std::vector<double>> velocities;

  static TrainState init(const TrainConfig& cfg);
};

/// Labeled and unlabeled training pools plus the held-out evaluation set.
struct TrainData {
  Dataset train;
  Dataset eval;
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;

  static TrainData load(const TrainConfig& cfg);
  static TrainData from(Dataset train, Dataset eval);
};

/// Everything random that a step drew, for independent re-computation.
struct StepTrace {
  std::vector<std::size_t> labeled_items;
  std::vector<std::size_t> unlabeled_items;
  std::vector<ViewPair> pairs;       // after CutMix
  std::vector<PseudoLabel> pseudo;   // after CutMix, before noise
  // Mini-batch level, items concatenated in batch order (row b·H·W + p).
  std::vector<int> hard;           // sampled-path classes, after noise
  std::vector<double> cc_target;   // soft target rows, after noise
  std::vector<std::size_t> samples;
};

/// One optimization step of the unlabeled-data flow: teacher pseudo labels on
/// the raw view pair, CutMix of student inputs and targets, student forward,
/// supervised, consistency and correlation (or InfoNCE) losses, SGD and EMA.
StepRecord train_step(const TrainConfig& cfg, TrainState& state, const TrainData& data, std::size_t step,
                      StepTrace* trace = nullptr);

/// Per-pixel argmax of the logits.
std::vector<int> predict(const SegNet& net, const Tensor& img);
MiouResult evaluate(const SegNet& net, const Dataset& eval);

/// Trains for cfg.steps, evaluating every cfg.eval_every steps and after the
/// last; final mIoU is the best evaluation. A non-finite loss ends the run
/// with a diagnostic status. `final_state` receives the trained nets.
RunRecord run_experiment(const TrainConfig& cfg, const TrainData& data, TrainState* final_state = nullptr);
RunRecord run_experiment(const TrainConfig& cfg);

/// Header plus one row per evaluation point.
std::string metrics_csv(const TrainConfig& cfg, const RunRecord& record);

struct SuiteRow {
  std::string kind;  // run | aggregate
  TrainConfig cfg;
  std::size_t n_runs = 1;
  double final_miou = 0.0;
  double miou_std = 0.0;
  StepRecord losses;
  std::string status;
};

/// Every config × seed run (seed = cfg.seed + k), then one aggregate row per
/// config with mean and sample standard deviation over its successful runs.
/// Failed runs are recorded and the suite continues.
std::vector<SuiteRow> run_suite(const std::vector<TrainConfig>& cfgs, std::size_t seeds,
                                const std::optional<TrainData>& shared_data = std::nullopt);
std::string suite_csv(const std::vector<SuiteRow>& rows);

/// Expands a suite config: `variants`, `w_cc_values`, `w_u_values` and
/// `eta_values` lists are crossed over the remaining keys.
std::vector<TrainConfig> expand_suite(const KeyValueConfig& kv);

}  // namespace mvcc
