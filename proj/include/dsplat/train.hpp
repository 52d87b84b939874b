#pragma once

#include "dsplat/losses.hpp"
#include "dsplat/primitives.hpp"
#include "dsplat/render.hpp"
#include "dsplat/scene.hpp"

#include <deque>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace dsplat {

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-15;
};

struct LearningRates {
  double position = 1.6e-4;
  double position_final_factor = 0.01;  // exponential decay target
  double scale = 5e-3;
  double rotation = 1e-3;
  double opacity = 5e-2;
  double sh = 2.5e-3;
};

struct DensifyConfig {
  int interval = 500;
  int start_iter = 500;
  double grad_threshold = 2e-4;       // mean screen-space gradient norm
  double prune_opacity = 0.005;
  double split_scale_fraction = 0.01;  // scales above this * extent split, else clone
  std::size_t max_primitives = 100000;
  bool during_mutual = false;
};

struct TrainConfig {
  LossWeights weights;
  int warmup_max_iters = 7000;
  int warmup_min_iters = 500;
  int autostop_window = 500;       // P
  double autostop_rel_tol = 1e-3;  // tau
  double ema_decay = 0.99;
  int mutual_iters = 20000;
  int alternation_block = 1;  // B
  AdamConfig adam;
  LearningRates lr;
  DensifyConfig densify;
  RenderConfig render;
  bool bidirectional_bp = false;
  bool freeze_beta = false;
  double init_beta = 0.01;
  double init_opacity = 0.1;
  int sh_degree = 3;
  std::uint64_t seed = 0;
  int log_interval = 1;
  int tsdf_resolution = 256;
  double coverage_threshold = 1e-3;  // alpha below this counts as empty

  int total_lr_iters() const { return warmup_max_iters + mutual_iters; }
  void validate() const;
};

/// Bias-corrected adaptive step over a flat parameter array. Non-finite
/// gradients skip their parameter; the skip count accumulates into *skipped.
void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               std::vector<double>& m, std::vector<double>& v,
               const std::vector<double>& lr_per_offset, int stride, const AdamConfig& cfg, int t,
               int* skipped = nullptr);

struct BranchCommon {
  int iter = 0;
  int adam_t = 0;
  double ema = std::numeric_limits<double>::quiet_NaN();
  std::deque<double> ema_history;  // most recent P+1 EMA values
  bool converged = false;
  bool diverged = false;
  int nonfinite_grad_events = 0;

  void record_loss(double loss, const TrainConfig& cfg);
};

/// True when the EMA plateaued over the last P iterations (or the budget ran
/// out); never before warmup_min_iters.
bool check_autostop(const BranchCommon& st, const TrainConfig& cfg);

struct DensifyReport {
  int cloned = 0, split = 0, pruned = 0;
  bool prune_skipped = false;
};

DensifyReport densify_prune(GaussianCloud& cloud, Rng& rng, const DensifyConfig& dc,
                            double scene_extent);
DensifyReport densify_prune(SurfelCloud& cloud, Rng& rng, const DensifyConfig& dc,
                            double scene_extent);

/// Depth map with kNoDepth where accumulated alpha is below the threshold.
Image masked_depth(const RenderOutput& out, double alpha_threshold);

struct TrainResult {
  int warmup_iters_2d = 0, warmup_iters_3d = 0;
  bool diverged = false;
  std::vector<double> mutual_loss_z;  // L_Z per mutual iteration
};

class Trainer {
 public:
  Trainer(Dataset dataset, TrainConfig cfg);

  void open_log(const std::string& path);
  TrainResult run();  // warm-up then mutual stage
  void run_warmup();
  void run_mutual();

  /// One alternating step on the given view; updates only the active branch.
  LossReport mutual_step(int view_id, int iter);

  /// One warm-up step of a single branch on the given view.
  double warmup_step_3d(int view_id);
  double warmup_step_2d(int view_id);

  TriangleMesh extract_scene_mesh(int resolution = 0) const;  // 0 = config value
  void save_checkpoints(const std::string& dir) const;

  const Dataset& dataset() const { return data_; }
  const TrainConfig& config() const { return cfg_; }

  GaussianCloud gaussians;
  SurfelCloud surfels;
  BranchCommon state_3d, state_2d;
  std::vector<double> mutual_loss_z;

 private:
  friend struct TrainerTestAccess;
  Dataset data_;
  TrainConfig cfg_;
  Rng densify_rng_;
  std::ofstream log_;

  struct ViewSampler {
    std::vector<int> ids, order;
    std::size_t pos = 0;
    Rng rng;
    explicit ViewSampler(std::vector<int> ids_, std::uint64_t seed);
    int next();
  };
  ViewSampler sampler_3d_, sampler_2d_, sampler_mutual_;
  std::vector<double> snapshot_3d_, snapshot_2d_;

  Image gamma_for_view(int view_id) const;
  std::vector<double> lr_vector_gaussian(int iter) const;
  std::vector<double> lr_vector_surfel(int iter) const;
  void log_line(const std::string& json_line);
  void maybe_densify(int iter, bool mutual_stage);
  void take_snapshots();
};

}  // namespace dsplat
