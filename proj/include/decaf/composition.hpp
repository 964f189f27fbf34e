#pragma once

// Composition of source representations: keep each source's variables that
// were not detected as changed against the target, drop duplicates, stitch
// the kept latent blocks, and optionally project to a fixed width.

#include <Eigen/Dense>

#include <json.hpp>

#include <string>
#include <vector>

#include "decaf/dense_net.hpp"
#include "decaf/representation.hpp"
#include "decaf/target_classifier.hpp"
#include "decaf/training.hpp"

namespace decaf {

struct StitchSource {
  std::string name;
  Assignment assignment;
  ChangeReport report;  // this source against the target data
};

struct KeptBlock {
  int variable = 0;
  int source = 0;
  std::vector<int> dims;  // latent dims in that source, ascending
};

struct OverlapResolution {
  int variable = 0;
  std::vector<int> candidates;  // sources keeping the variable, ascending
  std::vector<double> deltas;   // their max rate deltas
  int winner = 0;
};

struct StitchPlan {
  std::vector<std::string> source_names;
  int num_variables = 0;
  std::vector<std::vector<int>> kept;  // per source, before duplicate removal
  std::vector<KeptBlock> blocks;       // one per covered variable, ascending variable
  std::vector<OverlapResolution> overlaps;
  std::vector<int> uncovered;
  std::vector<std::string> warnings;

  int stitched_dim() const;
  std::vector<int> covered() const;
};

// Kept set of source l: target variables with latent dims in l that are
// neither detected nor excluded in l's report. A variable kept by several
// sources goes to the smallest max delta, ties to the lower source index.
// Uncovered target variables are listed as warnings.
StitchPlan plan_stitch(const std::vector<StitchSource>& sources, const std::vector<int>& target_variables);

// Concatenates the kept blocks in plan order; latents[l] is source l's
// encoding of the target trajectory. Throws on an empty plan or mismatched
// lengths.
LatentSequence stitch(const StitchPlan& plan, const std::vector<LatentSequence>& latents);

nlohmann::json to_json(const StitchPlan& plan);

struct ProjectionConfig {
  TrainConfig train{10, 512, 1e-3, 0.0, 0.05, 0};
  int hidden = 128;
  double holdout_fraction = 0.2;
};

struct Projection {
  DenseNet net;  // [stitched, hidden, required], swish

  int input_dim() const { return net.input_dim(); }
  int output_dim() const { return net.output_dim(); }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& stitched) const { return net.forward_batch(stitched); }
};

struct ProjectionFit {
  Projection projection;
  double initial_heldout_mse = 0.0;
  double final_heldout_mse = 0.0;
  std::vector<double> curve;  // per-epoch training MSE
  std::vector<std::string> warnings;
};

// Trains rho on source data: inputs are stitched latents, targets the
// required_dim-wide representation to reconstruct. The last
// holdout_fraction of rows is held out.
ProjectionFit fit_projection(const Eigen::MatrixXd& stitched, int required_dim, const Eigen::MatrixXd& targets,
                             const ProjectionConfig& config);

}  // namespace decaf
