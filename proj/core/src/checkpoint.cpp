#include "sis/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace sis {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'S', 'I', 'S', '1'};
}

void CheckpointWriter::add_tensor(const std::string& name, const MatX<float>& t) {
  tensors_.emplace_back(name, t);
}

void CheckpointWriter::add_network(const MlpNetwork<float>& net) {
  nlohmann::json spec;
  spec["name"] = net.name();
  spec["input_dim"] = net.input_dim();
  spec["hidden"] = net.hidden_dims();
  spec["output_dim"] = net.output_dim();
  spec["skip_at"] = net.skip_at();
  spec["relu_output"] = net.relu_output();
  networks_.push_back(std::move(spec));
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    add_tensor(net.name() + "/W" + std::to_string(l), net.layers()[l].W);
    add_tensor(net.name() + "/b" + std::to_string(l), net.layers()[l].b);
  }
}

void CheckpointWriter::add_adam_state(const std::string& net_name, AdamOptimizer<float>& opt) {
  for (std::size_t l = 0; l < opt.moment1_w().size(); ++l) {
    std::string base = net_name + "/adam" + std::to_string(l);
    add_tensor(base + "/mW", opt.moment1_w()[l]);
    add_tensor(base + "/vW", opt.moment2_w()[l]);
    add_tensor(base + "/mb", opt.moment1_b()[l]);
    add_tensor(base + "/vb", opt.moment2_b()[l]);
  }
  extra_["adam"][net_name] = {{"step", opt.step_count()}, {"lr", opt.lr()}};
}

void CheckpointWriter::write(const std::string& path) const {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["encoding_L"] = encoding_L_;
  manifest["networks"] = networks_;
  manifest["extra"] = extra_;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors_)
    manifest["tensors"].push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  const std::string text = manifest.dump();
  if (text.size() > 0xffffffffull) throw ValidationError("checkpoint manifest too large");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out.write(kMagic, 4);
  std::uint32_t len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors_)
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(float) * t.size()));
  if (!out) throw ValidationError("write failure: " + path);
}

Checkpoint::Checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError(path + ": bad magic (not a SIS1 checkpoint)");
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  if (!in) throw ValidationError(path + ": truncated header");
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw ValidationError(path + ": truncated manifest");
  try {
    manifest_ = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": manifest parse error: " + e.what());
  }
  if (manifest_.at("version").get<int>() != 1)
    throw ValidationError(path + ": unsupported checkpoint version");
  for (const auto& spec : manifest_.at("tensors")) {
    long rows = spec.at("rows").get<long>(), cols = spec.at("cols").get<long>();
    MatX<float> t(rows, cols);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(float) * t.size()));
    if (!in) throw ValidationError(path + ": truncated tensor " + spec.at("name").get<std::string>());
    tensors_.emplace(spec.at("name").get<std::string>(), std::move(t));
  }
}

void Checkpoint::save_as(const std::string& path) const {
  const std::string text = manifest_.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out.write(kMagic, 4);
  std::uint32_t len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& spec : manifest_.at("tensors")) {
    const MatX<float>& t = tensor(spec.at("name").get<std::string>());
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(float) * t.size()));
  }
  if (!out) throw ValidationError("write failure: " + path);
}

const MatX<float>& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

bool Checkpoint::has_network(const std::string& name) const {
  for (const auto& spec : manifest_.at("networks"))
    if (spec.at("name").get<std::string>() == name) return true;
  return false;
}

MlpNetwork<float> Checkpoint::network(const std::string& name) const {
  for (const auto& spec : manifest_.at("networks")) {
    if (spec.at("name").get<std::string>() != name) continue;
    MlpNetwork<float> net(spec.at("input_dim").get<int>(),
                          spec.at("hidden").get<std::vector<int>>(),
                          spec.at("output_dim").get<int>(), spec.at("skip_at").get<int>(), name,
                          spec.at("relu_output").get<bool>());
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      net.layers()[l].W = tensor(name + "/W" + std::to_string(l));
      net.layers()[l].b = tensor(name + "/b" + std::to_string(l));
    }
    return net;
  }
  throw ValidationError("checkpoint has no network '" + name + "'");
}

AdamOptimizer<float> Checkpoint::adam_state(const std::string& net_name,
                                            const AdamOptimizer<float>::Settings& settings,
                                            const MlpNetwork<float>& shape) const {
  AdamOptimizer<float> opt(settings, shape);
  const auto& st = extra().at("adam").at(net_name);
  opt.set_step_count(st.at("step").get<long>());
  opt.set_lr(st.at("lr").get<double>());
  for (std::size_t l = 0; l < shape.layers().size(); ++l) {
    std::string base = net_name + "/adam" + std::to_string(l);
    opt.moment1_w()[l] = tensor(base + "/mW");
    opt.moment2_w()[l] = tensor(base + "/vW");
    opt.moment1_b()[l] = tensor(base + "/mb");
    opt.moment2_b()[l] = tensor(base + "/vb");
  }
  return opt;
}

}  // namespace sis
