#include "dsm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace dsm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'S', 'M', 'C', 'K', 'P', 'T', '\0'};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos, const std::filesystem::path& path) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError(path.string() + ": checkpoint truncated");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

nlohmann::json spec_to_json(const BackboneSpec& spec) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : spec.stages) {
    stages.push_back({{"out_channels", s.out_channels}, {"stride", s.stride}, {"dilation", s.dilation}, {"convs", s.convs}});
  }
  return {{"in_channels", spec.in_channels},
          {"stages", stages},
          {"head_skip", spec.head_skip},
          {"head_init_std", spec.head_init_std}};
}

BackboneSpec spec_from_json(const nlohmann::json& j) {
  BackboneSpec spec;
  spec.in_channels = j.at("in_channels").get<int>();
  spec.head_skip = j.at("head_skip").get<bool>();
  spec.head_init_std = j.at("head_init_std").get<double>();
  for (const auto& s : j.at("stages")) {
    spec.stages.push_back({s.at("out_channels").get<int>(), s.at("stride").get<int>(), s.at("dilation").get<int>(),
                           s.at("convs").get<int>()});
  }
  return spec;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DualBranchNet& net, const TrainingState& state) {
  const auto params = net.parameters();
  nlohmann::json header;
  header["format"] = "dsmseg-checkpoint";
  header["backbone"] = spec_to_json(net.spec());
  header["share_depth"] = net.share_depth();
  header["branches"] = net.branch_count();
  header["input_extent"] = {net.input_extent().height, net.input_extent().width};
  header["epochs_completed"] = state.epochs_completed;
  header["iterations_completed"] = state.iterations_completed;
  header["rng_states"] = state.rng_states;
  header["config"] = state.config;
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& p : params) blocks.push_back({{"key", p.key}, {"size", p.param->size()}});
  header["blocks"] = blocks;
  nlohmann::json momentum = nlohmann::json::array();
  for (const auto& [key, buf] : state.momentum) momentum.push_back({{"key", key}, {"size", buf.size()}});
  header["momentum"] = momentum;

  const std::string header_text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header_text.size());
  out += header_text;
  auto put_doubles = [&](const std::vector<double>& v) {
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  };
  for (const auto& p : params) put_doubles(p.param->value);
  for (const auto& [key, buf] : state.momentum) put_doubles(buf);
  put<std::uint64_t>(out, fnv1a(out));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw RuntimeFailure("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw RuntimeFailure("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + ": not a dsmseg checkpoint (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(in, pos, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(version) +
                          " unsupported (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  if (in.size() < pos + 16) throw CheckpointError(path.string() + ": checkpoint truncated (version 1)");
  std::size_t tail = in.size() - sizeof(std::uint64_t);
  std::uint64_t stored_sum;
  std::memcpy(&stored_sum, in.data() + tail, sizeof(stored_sum));
  if (fnv1a(in.substr(0, tail)) != stored_sum) {
    throw CheckpointError(path.string() + ": checksum mismatch, checkpoint is corrupt (version 1)");
  }

  const auto header_len = take<std::uint64_t>(in, pos, path);
  if (pos + header_len > tail) throw CheckpointError(path.string() + ": checkpoint truncated (version 1)");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.substr(pos, header_len));
    pos += header_len;

    const BackboneSpec spec = spec_from_json(header.at("backbone"));
    const int branches = header.at("branches").get<int>();
    Checkpoint ck;
    ck.net = branches == 2 ? DualBranchNet::build_dual(spec, header.at("share_depth").get<int>(), 0)
                           : DualBranchNet::build_single(spec, 0);
    const auto extent = header.at("input_extent");
    ck.net.set_input_extent({extent.at(0).get<int>(), extent.at(1).get<int>()});

    auto read_doubles = [&](std::vector<double>& v, std::size_t n) {
      if (pos + n * sizeof(double) > tail) throw CheckpointError(path.string() + ": checkpoint truncated (version 1)");
      v.resize(n);
      std::memcpy(v.data(), in.data() + pos, n * sizeof(double));
      pos += n * sizeof(double);
    };

    auto params = ck.net.parameters();
    const auto& blocks = header.at("blocks");
    if (blocks.size() != params.size()) throw CheckpointError(path.string() + ": parameter layout mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto key = blocks[i].at("key").get<std::string>();
      const auto size = blocks[i].at("size").get<std::size_t>();
      if (key != params[i].key || size != params[i].param->size()) {
        throw CheckpointError(path.string() + ": unexpected parameter block '" + key + "'");
      }
      read_doubles(params[i].param->value, size);
    }
    for (const auto& m : header.at("momentum")) {
      auto& buf = ck.state.momentum[m.at("key").get<std::string>()];
      read_doubles(buf, m.at("size").get<std::size_t>());
    }
    if (pos != tail) throw CheckpointError(path.string() + ": trailing bytes in checkpoint");

    ck.state.epochs_completed = header.at("epochs_completed").get<int>();
    ck.state.iterations_completed = header.at("iterations_completed").get<std::uint64_t>();
    ck.state.rng_states = header.at("rng_states").get<std::map<std::string, std::string>>();
    ck.state.config = header.at("config").get<std::string>();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed checkpoint header (version 1): " + e.what());
  }
}

}  // namespace dsm
