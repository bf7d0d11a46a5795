#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dsm/core_types.hpp"
#include "dsm/nn.hpp"

namespace dsm {

struct StageSpec {
  int out_channels = 8;
  int stride = 1;
  int dilation = 1;
  int convs = 1;  // 3x3 conv + ReLU repeated
};

/// Staged encoder followed by a 1x1 classifier head. The head bilinearly
/// upsamples the last stage to the input extent (optionally concatenating
/// first-stage features) and squashes with a sigmoid.
struct BackboneSpec {
  int in_channels = ImageTensor::kChannels;
  std::vector<StageSpec> stages;
  bool head_skip = true;
  double head_init_std = 0.01;

  int stage_count() const { return static_cast<int>(stages.size()); }
  void validate() const;

  /// 5 stages, channels 8/16/32/32/32, stride 2 in stages 2-3, dilation 2 in 4-5.
  static BackboneSpec tinyseg();
};

enum class BranchId : int { kLarge = 0, kSmall = 1 };

std::string_view branch_key(BranchId id, bool single);

/// One 3x3-conv stack; a backbone stage.
class Stage {
 public:
  Stage() = default;
  Stage(int in_channels, const StageSpec& spec);

  struct Trace {
    std::vector<nn::Tensor> inputs;       // input of each conv
    std::vector<nn::Tensor> activations;  // post-ReLU output of each conv
    const nn::Tensor& output() const { return activations.back(); }
  };

  nn::Tensor forward(const nn::Tensor& x, Trace* trace) const;
  nn::Tensor backward(const Trace& trace, nn::Tensor grad_out);

  std::vector<nn::Conv2d>& convs() { return convs_; }
  const std::vector<nn::Conv2d>& convs() const { return convs_; }
  int out_channels() const { return convs_.back().out_channels(); }
  std::size_t parameter_count() const;

 private:
  std::vector<nn::Conv2d> convs_;
};

struct NamedParam {
  std::string key;  // e.g. "shared/stage2/conv0/weight", "L/head/bias"
  nn::Param* param;
};

struct ConstNamedParam {
  std::string key;
  const nn::Param* param;
};

struct ParameterReport {
  std::size_t shared = 0;
  std::size_t branch_large = 0;
  std::size_t branch_small = 0;
  std::size_t single_branch = 0;  // the same backbone with no duplication
  double ratio = 1.0;             // total / single_branch
};

/// Shared early stages 1..k plus one or two branch-specific tails
/// (stages k+1..S and a head). A dual net has branches L and S; a single
/// net (baseline) has one branch and shares every stage.
class DualBranchNet {
 public:
  struct BranchPass {
    BranchId branch = BranchId::kLarge;
    Extent extent;
    std::vector<Stage::Trace> stages;  // all S stages, shared ones first
    nn::Tensor deep_upsampled;
    nn::Tensor head_input;
    nn::Tensor logits;
    ProbabilityMask prob;
  };

  DualBranchNet() = default;

  /// Requires 1 <= share_depth < S. Branch S starts as a copy of branch L.
  static DualBranchNet build_dual(const BackboneSpec& spec, int share_depth, std::uint64_t seed);
  static DualBranchNet build_single(const BackboneSpec& spec, std::uint64_t seed);

  const BackboneSpec& spec() const { return spec_; }
  int share_depth() const { return share_depth_; }
  bool is_dual() const { return branches_.size() == 2; }
  int branch_count() const { return static_cast<int>(branches_.size()); }

  BranchPass forward_branch(BranchId branch, const ImageTensor& x) const;
  /// Accumulates parameter gradients given dLoss/dprob.
  void backward_branch(const BranchPass& pass, const Grid<double>& grad_prob);

  /// Y_L from branch L on x_large, Y_S from branch S on x_small.
  std::pair<BranchPass, BranchPass> forward_train(const ImageTensor& x_large, const ImageTensor& x_small) const;
  /// Element-wise mean of the branch outputs (the single output for a single net).
  ProbabilityMask forward_infer(const ImageTensor& x) const;

  void zero_grad();
  std::vector<NamedParam> parameters();
  std::vector<ConstNamedParam> parameters() const;

  /// Stage i (1-based) as seen from a branch: shared storage for i <= k.
  const Stage& stage(BranchId branch, int index) const;
  Stage& stage(BranchId branch, int index);
  const nn::Conv2d& head(BranchId branch) const;

  ParameterReport parameter_report() const;

  /// Copies branch L's specific parameters into branch S.
  void tie_branch_tails();

  /// Input extent the network will be fed (set by the training pipeline;
  /// empty means any extent is accepted).
  void set_input_extent(Extent e) { input_extent_ = e; }
  Extent input_extent() const { return input_extent_; }

 private:
  struct Branch {
    std::vector<Stage> stages;
    nn::Conv2d head;
  };

  static std::vector<Stage> make_stages(const BackboneSpec& spec, int first, int last);
  nn::Conv2d make_head() const;
  void check_input(const ImageTensor& x) const;
  std::size_t branch_index(BranchId id) const;

  BackboneSpec spec_;
  int share_depth_ = 0;
  std::vector<Stage> shared_;
  std::vector<Branch> branches_;
  Extent input_extent_{};
};

}  // namespace dsm
