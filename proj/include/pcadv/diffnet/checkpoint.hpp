#pragma once

// "PCKP" checkpoint files.
//
//   magic "PCKP" | u32 version (=1) | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 ndim | ndim x u32 dims |
//               little-endian f32 data
//
// Model metadata (kind, architecture, class count, ...) is stored as
// single-element tensors named "meta.*".

#include <cmath>
#include <string>

#include "pcadv/binary_io.hpp"
#include "pcadv/diffnet/autoencoder.hpp"
#include "pcadv/diffnet/classifier.hpp"

namespace pcadv {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_bundle(io::ByteWriter& w, const TensorBundle& b) {
  w.bytes("PCKP");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(b.size()));
  for (const auto& [name, t] : b) {
    if (name.size() > 0xffff) throw InvalidArgument("tensor name too long: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(d);
    for (float v : t.data) w.f32(v);
  }
}

inline TensorBundle read_bundle(io::ByteReader& r) {
  const std::size_t magic_at = r.offset();
  if (r.bytes(4, "magic") != "PCKP") throw ParseError("bad magic: expected 'PCKP'", magic_at);
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32("version"); v != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(v), version_at);
  const auto count = r.u32("tensor count");
  TensorBundle b;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u16("tensor name length");
    std::string name = r.bytes(len, "tensor name");
    const auto ndim = r.u8("tensor rank");
    Tensor t;
    for (std::uint8_t d = 0; d < ndim; ++d) t.shape.push_back(r.u32("tensor dims"));
    const std::size_t n = Tensor::element_count(t.shape);
    if (n > r.remaining() / 4) throw ParseError("tensor '" + name + "' data truncated", r.offset());
    t.data.resize(n);
    for (auto& v : t.data) v = r.f32("tensor data");
    const std::size_t at = r.offset();
    try {
      b.add(std::move(name), std::move(t));
    } catch (const std::exception& e) {
      throw ParseError(e.what(), at);
    }
  }
  return b;
}

namespace detail {

inline Tensor scalar_tensor(float v) {
  Tensor t({1});
  t.data[0] = v;
  return t;
}

inline std::size_t meta_count(const TensorBundle& b, std::string_view name) {
  const auto& t = b.at(name);
  if (t.size() != 1 || t.data[0] < 0 || t.data[0] != std::floor(t.data[0]))
    throw InvalidInput("metadata tensor '" + std::string(name) + "' is malformed");
  return static_cast<std::size_t>(t.data[0]);
}

inline TensorBundle strip_meta(const TensorBundle& b) {
  TensorBundle out;
  for (const auto& [name, t] : b)
    if (!name.starts_with("meta.")) out.add(name, t);
  return out;
}

enum class ModelKind { classifier = 0, autoencoder = 1 };

}  // namespace detail

inline void save_classifier(const ClassifierModel& m, const std::string& path) {
  TensorBundle b = m.params;
  b.add("meta.kind", detail::scalar_tensor(float(detail::ModelKind::classifier)));
  b.add("meta.arch", detail::scalar_tensor(float(m.arch)));
  b.add("meta.k_classes", detail::scalar_tensor(float(m.k_classes)));
  b.add("meta.knn_k", detail::scalar_tensor(float(m.knn_k)));
  io::ByteWriter w;
  write_bundle(w, b);
  w.write_file(path);
}

inline ClassifierModel load_classifier(const std::string& path) {
  auto r = io::ByteReader::from_file(path);
  const TensorBundle b = read_bundle(r);
  if (detail::meta_count(b, "meta.kind") != std::size_t(detail::ModelKind::classifier))
    throw InvalidInput("'" + path + "' is not a classifier checkpoint");
  const auto arch_code = detail::meta_count(b, "meta.arch");
  if (arch_code > std::size_t(Arch::edgeconv_lite)) throw InvalidInput("unknown architecture code in '" + path + "'");
  ClassifierModel m{static_cast<Arch>(arch_code), detail::meta_count(b, "meta.k_classes"),
                    detail::meta_count(b, "meta.knn_k"), detail::strip_meta(b)};
  ClassifierNet<float> check(m);  // validates shapes
  return m;
}

inline void save_autoencoder(const AEModel& m, const std::string& path) {
  TensorBundle b = m.params;
  b.add("meta.kind", detail::scalar_tensor(float(detail::ModelKind::autoencoder)));
  b.add("meta.latent_dim", detail::scalar_tensor(float(m.latent_dim)));
  b.add("meta.n_points", detail::scalar_tensor(float(m.n_points)));
  io::ByteWriter w;
  write_bundle(w, b);
  w.write_file(path);
}

inline AEModel load_autoencoder(const std::string& path) {
  auto r = io::ByteReader::from_file(path);
  const TensorBundle b = read_bundle(r);
  if (detail::meta_count(b, "meta.kind") != std::size_t(detail::ModelKind::autoencoder))
    throw InvalidInput("'" + path + "' is not an auto-encoder checkpoint");
  AEModel m{detail::meta_count(b, "meta.latent_dim"), detail::meta_count(b, "meta.n_points"), detail::strip_meta(b)};
  AENet<float> check(m);
  return m;
}

}  // namespace pcadv
