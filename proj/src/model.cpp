#include "dsm/model.hpp"

#include <algorithm>

namespace dsm {

void BackboneSpec::validate() const {
  if (stages.size() < 2) throw ValidationError("backbone needs at least 2 stages");
  if (in_channels < 1) throw ValidationError("backbone needs at least one input channel");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (s.out_channels < 1 || s.stride < 1 || s.dilation < 1 || s.convs < 1) {
      throw ValidationError("invalid backbone stage " + std::to_string(i + 1));
    }
  }
  if (!(head_init_std > 0.0)) throw ValidationError("head init std must be positive");
}

BackboneSpec BackboneSpec::tinyseg() {
  BackboneSpec spec;
  spec.stages = {
      {8, 1, 1, 1}, {16, 2, 1, 1}, {32, 2, 1, 1}, {32, 1, 2, 1}, {32, 1, 2, 1},
  };
  return spec;
}

std::string_view branch_key(BranchId id, bool single) {
  if (single) return "main";
  return id == BranchId::kLarge ? "L" : "S";
}

Stage::Stage(int in_channels, const StageSpec& spec) {
  int in = in_channels;
  for (int j = 0; j < spec.convs; ++j) {
    convs_.emplace_back(in, spec.out_channels, 3, j == 0 ? spec.stride : 1, spec.dilation);
    in = spec.out_channels;
  }
}

nn::Tensor Stage::forward(const nn::Tensor& x, Trace* trace) const {
  nn::Tensor h = x;
  for (const auto& conv : convs_) {
    nn::Tensor y = conv.forward(h);
    nn::relu_inplace(y);
    if (trace != nullptr) {
      trace->inputs.push_back(std::move(h));
      trace->activations.push_back(y);
    }
    h = std::move(y);
  }
  return h;
}

nn::Tensor Stage::backward(const Trace& trace, nn::Tensor grad_out) {
  for (std::size_t j = convs_.size(); j-- > 0;) {
    nn::relu_backward_inplace(trace.activations[j], grad_out);
    grad_out = convs_[j].backward(trace.inputs[j], grad_out);
  }
  return grad_out;
}

std::size_t Stage::parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : convs_) n += c.weight.size() + c.bias.size();
  return n;
}

std::vector<Stage> DualBranchNet::make_stages(const BackboneSpec& spec, int first, int last) {
  std::vector<Stage> out;
  for (int i = first; i <= last; ++i) {
    const int in = i == 1 ? spec.in_channels : spec.stages[static_cast<std::size_t>(i - 2)].out_channels;
    out.emplace_back(in, spec.stages[static_cast<std::size_t>(i - 1)]);
  }
  return out;
}

nn::Conv2d DualBranchNet::make_head() const {
  int in = spec_.stages.back().out_channels;
  if (spec_.head_skip) in += spec_.stages.front().out_channels;
  return nn::Conv2d(in, 1, 1);
}

DualBranchNet DualBranchNet::build_dual(const BackboneSpec& spec, int share_depth, std::uint64_t seed) {
  spec.validate();
  const int s = spec.stage_count();
  if (share_depth < 1 || share_depth >= s) {
    throw OutOfRange("share depth must satisfy 1 <= k < " + std::to_string(s) + ", got " +
                     std::to_string(share_depth));
  }
  DualBranchNet net;
  net.spec_ = spec;
  net.share_depth_ = share_depth;
  net.shared_ = make_stages(spec, 1, share_depth);

  std::mt19937_64 rng(seed);
  for (auto& stage : net.shared_) {
    for (auto& conv : stage.convs()) conv.init_he(rng);
  }
  Branch large{make_stages(spec, share_depth + 1, s), net.make_head()};
  for (auto& stage : large.stages) {
    for (auto& conv : stage.convs()) conv.init_he(rng);
  }
  large.head.init_normal(rng, spec.head_init_std);
  net.branches_.push_back(large);
  net.branches_.push_back(std::move(large));
  return net;
}

DualBranchNet DualBranchNet::build_single(const BackboneSpec& spec, std::uint64_t seed) {
  spec.validate();
  DualBranchNet net;
  net.spec_ = spec;
  net.share_depth_ = spec.stage_count();
  net.shared_ = make_stages(spec, 1, spec.stage_count());
  std::mt19937_64 rng(seed);
  for (auto& stage : net.shared_) {
    for (auto& conv : stage.convs()) conv.init_he(rng);
  }
  Branch only{{}, net.make_head()};
  only.head.init_normal(rng, spec.head_init_std);
  net.branches_.push_back(std::move(only));
  return net;
}

std::size_t DualBranchNet::branch_index(BranchId id) const {
  if (branches_.empty()) throw ValidationError("network has not been built");
  return branches_.size() == 1 ? 0 : static_cast<std::size_t>(id);
}

const Stage& DualBranchNet::stage(BranchId branch, int index) const {
  if (index < 1 || index > spec_.stage_count()) throw OutOfRange("stage index " + std::to_string(index));
  if (index <= share_depth_) return shared_[static_cast<std::size_t>(index - 1)];
  return branches_[branch_index(branch)].stages[static_cast<std::size_t>(index - share_depth_ - 1)];
}

Stage& DualBranchNet::stage(BranchId branch, int index) {
  return const_cast<Stage&>(static_cast<const DualBranchNet&>(*this).stage(branch, index));
}

const nn::Conv2d& DualBranchNet::head(BranchId branch) const { return branches_[branch_index(branch)].head; }

void DualBranchNet::check_input(const ImageTensor& x) const {
  if (input_extent_.height > 0 && x.extent() != input_extent_) {
    throw ExtentMismatch("network input is " + to_string(x.extent()) + " but configured extent is " +
                         to_string(input_extent_));
  }
}

DualBranchNet::BranchPass DualBranchNet::forward_branch(BranchId branch, const ImageTensor& x) const {
  check_input(x);
  const int s = spec_.stage_count();
  BranchPass pass;
  pass.branch = branch;
  pass.extent = x.extent();
  pass.stages.resize(static_cast<std::size_t>(s));

  nn::Tensor h = nn::Tensor::from_image(x);
  for (int i = 1; i <= s; ++i) h = stage(branch, i).forward(h, &pass.stages[static_cast<std::size_t>(i - 1)]);

  pass.deep_upsampled = nn::upsample_bilinear(h, x.height(), x.width());
  if (spec_.head_skip) {
    const nn::Tensor& first = pass.stages.front().output();
    pass.head_input = nn::concat_channels(pass.deep_upsampled, first.height == x.height() && first.width == x.width()
                                                                   ? first
                                                                   : nn::upsample_bilinear(first, x.height(), x.width()));
  } else {
    pass.head_input = pass.deep_upsampled;
  }
  pass.logits = head(branch).forward(pass.head_input);

  Grid<double> prob(x.height(), x.width());
  for (std::size_t i = 0; i < prob.size(); ++i) prob[i] = nn::sigmoid(pass.logits.data[i]);
  pass.prob = ProbabilityMask(std::move(prob));
  return pass;
}

void DualBranchNet::backward_branch(const BranchPass& pass, const Grid<double>& grad_prob) {
  if (grad_prob.extent() != pass.extent) {
    throw ExtentMismatch("gradient is " + to_string(grad_prob.extent()) + " but prediction is " +
                         to_string(pass.extent));
  }
  const int s = spec_.stage_count();
  const int height = pass.extent.height;
  const int width = pass.extent.width;

  nn::Tensor dlogits(1, height, width);
  for (std::size_t i = 0; i < grad_prob.size(); ++i) {
    const double p = pass.prob[i];
    dlogits.data[i] = grad_prob[i] * p * (1.0 - p);
  }
  auto& br = branches_[branch_index(pass.branch)];
  nn::Tensor dhead = br.head.backward(pass.head_input, dlogits);

  const nn::Tensor& deep = pass.stages.back().output();
  nn::Tensor dup(deep.channels, height, width);
  std::copy(dhead.data.begin(), dhead.data.begin() + static_cast<std::ptrdiff_t>(dup.data.size()), dup.data.begin());

  std::vector<nn::Tensor> grad_out(static_cast<std::size_t>(s));
  grad_out.back() = nn::upsample_bilinear_backward(dup, deep.height, deep.width);

  const nn::Tensor& first = pass.stages.front().output();
  if (spec_.head_skip) {
    nn::Tensor dskip(first.channels, height, width);
    std::copy(dhead.data.begin() + static_cast<std::ptrdiff_t>(dup.data.size()), dhead.data.end(), dskip.data.begin());
    nn::Tensor g = first.height == height && first.width == width
                       ? std::move(dskip)
                       : nn::upsample_bilinear_backward(dskip, first.height, first.width);
    grad_out.front() = std::move(g);
  }

  for (int i = s; i >= 1; --i) {
    auto idx = static_cast<std::size_t>(i - 1);
    nn::Tensor dx = stage(pass.branch, i).backward(pass.stages[idx], std::move(grad_out[idx]));
    if (i > 1) {
      auto& target = grad_out[idx - 1];
      if (target.data.empty()) {
        target = std::move(dx);
      } else {
        for (std::size_t j = 0; j < dx.data.size(); ++j) target.data[j] += dx.data[j];
      }
    }
  }
}

std::pair<DualBranchNet::BranchPass, DualBranchNet::BranchPass> DualBranchNet::forward_train(
    const ImageTensor& x_large, const ImageTensor& x_small) const {
  return {forward_branch(BranchId::kLarge, x_large), forward_branch(BranchId::kSmall, x_small)};
}

ProbabilityMask DualBranchNet::forward_infer(const ImageTensor& x) const {
  if (!is_dual()) return forward_branch(BranchId::kLarge, x).prob;
  const auto large = forward_branch(BranchId::kLarge, x);
  const auto small = forward_branch(BranchId::kSmall, x);
  Grid<double> avg(x.height(), x.width());
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = 0.5 * (large.prob[i] + small.prob[i]);
  return ProbabilityMask(std::move(avg));
}

void DualBranchNet::zero_grad() {
  for (auto& p : parameters()) p.param->zero_grad();
}

namespace {

template <typename StageT, typename Out>
void collect_stage(StageT& stage, const std::string& prefix, Out& out) {
  for (std::size_t j = 0; j < stage.convs().size(); ++j) {
    auto& conv = stage.convs()[j];
    const std::string base = prefix + "/conv" + std::to_string(j);
    out.push_back({base + "/weight", &conv.weight});
    out.push_back({base + "/bias", &conv.bias});
  }
}

}  // namespace

std::vector<NamedParam> DualBranchNet::parameters() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < shared_.size(); ++i) {
    collect_stage(shared_[i], "shared/stage" + std::to_string(i + 1), out);
  }
  const bool single = !is_dual();
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const std::string name(branch_key(static_cast<BranchId>(b), single));
    auto& br = branches_[b];
    for (std::size_t i = 0; i < br.stages.size(); ++i) {
      collect_stage(br.stages[i], name + "/stage" + std::to_string(share_depth_ + 1 + static_cast<int>(i)), out);
    }
    out.push_back({name + "/head/weight", &br.head.weight});
    out.push_back({name + "/head/bias", &br.head.bias});
  }
  return out;
}

std::vector<ConstNamedParam> DualBranchNet::parameters() const {
  std::vector<ConstNamedParam> out;
  for (auto& p : const_cast<DualBranchNet*>(this)->parameters()) out.push_back({std::move(p.key), p.param});
  return out;
}

ParameterReport DualBranchNet::parameter_report() const {
  ParameterReport r;
  for (const auto& st : shared_) r.shared += st.parameter_count();
  auto tail = [](const Branch& b) {
    std::size_t n = b.head.weight.size() + b.head.bias.size();
    for (const auto& st : b.stages) n += st.parameter_count();
    return n;
  };
  r.branch_large = branches_.empty() ? 0 : tail(branches_[0]);
  r.branch_small = branches_.size() > 1 ? tail(branches_[1]) : 0;
  r.single_branch = r.shared + r.branch_large;
  r.ratio = r.single_branch == 0 ? 0.0
                                 : static_cast<double>(r.shared + r.branch_large + r.branch_small) /
                                       static_cast<double>(r.single_branch);
  return r;
}

void DualBranchNet::tie_branch_tails() {
  if (is_dual()) branches_[1] = branches_[0];
}

}  // namespace dsm
