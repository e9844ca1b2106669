#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sis/nn.hpp"

namespace sis {

/// Checkpoint container: magic "SIS1", u32 little-endian manifest length, a
/// UTF-8 JSON manifest (network shapes, encoding L, tensor order, free-form
/// "extra"), then raw 32-bit little-endian float arrays in manifest order
/// (column-major).
class CheckpointWriter {
 public:
  void add_tensor(const std::string& name, const MatX<float>& t);
  void add_network(const MlpNetwork<float>& net);
  void add_adam_state(const std::string& net_name, AdamOptimizer<float>& opt);

  nlohmann::json& extra() { return extra_; }
  void set_encoding(const FourierEncoding& enc) { encoding_L_ = enc.L; }

  void write(const std::string& path) const;

 private:
  std::vector<std::pair<std::string, MatX<float>>> tensors_;
  nlohmann::json networks_ = nlohmann::json::array();
  nlohmann::json extra_ = nlohmann::json::object();
  int encoding_L_ = 10;
};

class Checkpoint {
 public:
  explicit Checkpoint(const std::string& path);

  const nlohmann::json& manifest() const { return manifest_; }
  const nlohmann::json& extra() const { return manifest_.at("extra"); }
  FourierEncoding encoding() const { return FourierEncoding{manifest_.at("encoding_L").get<int>()}; }

  bool has_tensor(const std::string& name) const { return tensors_.count(name) > 0; }
  const MatX<float>& tensor(const std::string& name) const;

  bool has_network(const std::string& name) const;
  MlpNetwork<float> network(const std::string& name) const;
  /// Re-serializes the loaded checkpoint; byte-identical to the source file.
  void save_as(const std::string& path) const;
  /// Restores Adam moments/step saved by add_adam_state.
  AdamOptimizer<float> adam_state(const std::string& net_name,
                                  const AdamOptimizer<float>::Settings& settings,
                                  const MlpNetwork<float>& shape) const;

 private:
  nlohmann::json manifest_;
  std::map<std::string, MatX<float>> tensors_;
};

}  // namespace sis
