#include "dsm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace dsm {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValidationError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValidationError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config key '" + key + "': expected true or false, got '" + v + "'");
}

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

template <typename E, std::size_t N>
E parse_enum(const std::string& key, const std::string& v, const EnumName<E> (&names)[N]) {
  for (const auto& n : names) {
    if (v == n.name) return n.value;
  }
  std::string allowed;
  for (const auto& n : names) allowed += std::string(allowed.empty() ? "" : ", ") + n.name;
  throw ValidationError("config key '" + key + "': '" + v + "' is not one of " + allowed);
}

template <typename E, std::size_t N>
std::string enum_name(E value, const EnumName<E> (&names)[N]) {
  for (const auto& n : names) {
    if (n.value == value) return n.name;
  }
  return "?";
}

constexpr EnumName<ModelKind> kModels[] = {{ModelKind::kDual, "dual"}, {ModelKind::kSingle, "single"}};
constexpr EnumName<LossKind> kLosses[] = {{LossKind::kDsm, "dsm"}, {LossKind::kDice, "dice"}, {LossKind::kCbce, "cbce"}};
constexpr EnumName<RateMode> kRateModes[] = {{RateMode::kFixed, "fixed"},
                                             {RateMode::kReverseClassFrequency, "reverse_class_frequency"}};
constexpr EnumName<ZeroClassFallback> kFallbacks[] = {{ZeroClassFallback::kUniform, "uniform"},
                                                      {ZeroClassFallback::kAllBackground, "all_background"}};
constexpr EnumName<UniformVariant> kUniforms[] = {{UniformVariant::kDeterministic, "deterministic"},
                                                  {UniformVariant::kStochastic, "stochastic"}};
constexpr EnumName<Orientation> kOrientations[] = {{Orientation::kText, "text"},
                                                   {Orientation::kPrintedEq5, "printed"}};
constexpr EnumName<InputPrep> kPreps[] = {{InputPrep::kNone, "none"},
                                          {InputPrep::kFovCropPadResize, "fov_crop_pad_resize"},
                                          {InputPrep::kDirectResize, "direct_resize"}};
constexpr EnumName<FnMode> kFnModes[] = {{FnMode::kLiteral, "literal"}, {FnMode::kCorrected, "corrected"}};
constexpr EnumName<AuprIntegration> kAuprs[] = {{AuprIntegration::kStep, "step"},
                                                {AuprIntegration::kTrapezoid, "trapezoid"}};

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (double d : v) out += (out.empty() ? "" : ",") + fmt_double(d);
  return out;
}

std::vector<double> split_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  return out;
}

struct Field {
  const char* key;
  std::function<void(TrainingConfig&, const std::string&, const std::filesystem::path&)> set;
  std::function<std::string(const TrainingConfig&)> get;
};

std::filesystem::path resolve(const std::string& v, const std::filesystem::path& base) {
  if (v.empty()) return {};
  std::filesystem::path p(v);
  if (p.is_relative() && !base.empty()) p = base / p;
  return std::filesystem::absolute(p).lexically_normal();
}

#define DSM_DOUBLE(name, member)                                                                            \
  Field {                                                                                                   \
    name, [](TrainingConfig& c, const std::string& v, const auto&) { c.member = parse_double(name, v); }, \
        [](const TrainingConfig& c) { return fmt_double(c.member); }                                        \
  }
#define DSM_INT(name, member, type)                                                                          \
  Field {                                                                                                    \
    name, [](TrainingConfig& c, const std::string& v, const auto&) { c.member = parse_int<type>(name, v); }, \
        [](const TrainingConfig& c) { return std::to_string(c.member); }                                     \
  }
#define DSM_ENUM(name, member, table)                                                                          \
  Field {                                                                                                      \
    name, [](TrainingConfig& c, const std::string& v, const auto&) { c.member = parse_enum(name, v, table); }, \
        [](const TrainingConfig& c) { return enum_name(c.member, table); }                                     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      DSM_DOUBLE("base_lr", base_lr),
      DSM_DOUBLE("lr_power", lr_power),
      DSM_DOUBLE("weight_decay", weight_decay),
      DSM_DOUBLE("momentum", momentum),
      DSM_INT("batch_size", batch_size, int),
      DSM_INT("epochs", epochs, int),
      DSM_ENUM("model", model, kModels),
      DSM_ENUM("loss", loss, kLosses),
      DSM_INT("share_depth", share_depth, int),
      DSM_DOUBLE("sampler_rate", sampler.rate),
      DSM_ENUM("sampler_rate_mode", sampler.rate_mode, kRateModes),
      DSM_ENUM("sampler_fallback", sampler.fallback, kFallbacks),
      DSM_ENUM("uniform_sampler", uniform, kUniforms),
      DSM_ENUM("orientation", orientation, kOrientations),
      DSM_DOUBLE("dice_eps", dice_eps),
      DSM_DOUBLE("cbce_clip", cbce_clip),
      DSM_INT("seed", seed, std::uint64_t),
      DSM_INT("data_seed", data_seed, std::uint64_t),
      Field{"train_manifest",
            [](TrainingConfig& c, const std::string& v, const auto& base) { c.train_manifest = resolve(v, base); },
            [](const TrainingConfig& c) { return c.train_manifest.string(); }},
      Field{"test_manifest",
            [](TrainingConfig& c, const std::string& v, const auto& base) { c.test_manifest = resolve(v, base); },
            [](const TrainingConfig& c) { return c.test_manifest.string(); }},
      DSM_ENUM("preprocess", prep, kPreps),
      DSM_INT("input_height", input.height, int),
      DSM_INT("input_width", input.width, int),
      Field{"augment", [](TrainingConfig& c, const std::string& v, const auto&) { c.augment = parse_bool("augment", v); },
            [](const TrainingConfig& c) { return std::string(c.augment ? "true" : "false"); }},
      DSM_DOUBLE("threshold", threshold),
      Field{"sigmas", [](TrainingConfig& c, const std::string& v, const auto&) { c.sigmas = split_doubles("sigmas", v); },
            [](const TrainingConfig& c) { return join_doubles(c.sigmas); }},
      DSM_ENUM("fn_mode", fn_mode, kFnModes),
      DSM_ENUM("aupr", aupr, kAuprs),
      DSM_INT("small_max_area", small_max_area, int),
  };
  return table;
}

#undef DSM_DOUBLE
#undef DSM_INT
#undef DSM_ENUM

void assign(TrainingConfig& c, const std::string& key, const std::string& value, const std::filesystem::path& base) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(c, value, base);
      return;
    }
  }
  throw ValidationError("unknown config key '" + key + "'");
}

}  // namespace

void TrainingConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw OutOfRange(std::string(name) + " must be positive");
  };
  positive(base_lr, "base_lr");
  positive(lr_power, "lr_power");
  positive(dice_eps, "dice_eps");
  positive(cbce_clip, "cbce_clip");
  if (!(weight_decay >= 0.0)) throw OutOfRange("weight_decay must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw OutOfRange("momentum must lie in [0,1)");
  if (batch_size < 2 || batch_size % 2 != 0) throw OutOfRange("batch_size must be a positive even number");
  if (epochs < 1) throw OutOfRange("epochs must be at least 1");
  if (model == ModelKind::kDual && loss != LossKind::kDsm) throw ValidationError("a dual model trains with loss=dsm");
  if (model == ModelKind::kSingle && loss == LossKind::kDsm) {
    throw ValidationError("loss=dsm needs model=dual; single models use dice or cbce");
  }
  if (!(sampler.rate >= 0.0 && sampler.rate <= 1.0)) throw OutOfRange("sampler_rate must lie in [0,1]");
  if (input.height < 1 || input.width < 1) throw OutOfRange("input extent must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw OutOfRange("threshold must lie in (0,1)");
  if (small_max_area < 0) throw OutOfRange("small_max_area must be non-negative");
  for (double s : sigmas) {
    if (!(s >= 0.0 && s <= 1.0)) throw OutOfRange("sigma " + fmt_double(s) + " outside [0,1]");
  }
}

MetricConfig TrainingConfig::metric_config() const {
  MetricConfig m;
  m.threshold = threshold;
  m.sigmas = sigmas;
  m.region.fn_mode = fn_mode;
  m.aupr_method = aupr;
  m.small_max_area = static_cast<std::size_t>(small_max_area);
  return m;
}

PreprocessSpec TrainingConfig::preprocess_spec() const {
  PreprocessSpec spec;
  spec.mode = prep == InputPrep::kDirectResize ? PreprocessMode::kDirectResize : PreprocessMode::kFovCropPadResize;
  spec.target = input;
  return spec;
}

TrainingConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  TrainingConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    assign(c, trim(t.substr(0, eq)), trim(t.substr(eq + 1)), base_dir);
  }
  return c;
}

TrainingConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

void apply_override(TrainingConfig& config, std::string_view assignment, const std::filesystem::path& base_dir) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ValidationError("override '" + std::string(assignment) + "' is not key=value");
  }
  assign(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), base_dir);
}

std::string dump_config(const TrainingConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

bool operator==(const TrainingConfig& a, const TrainingConfig& b) { return dump_config(a) == dump_config(b); }

}  // namespace dsm
