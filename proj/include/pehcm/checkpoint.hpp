#pragma once

// Binary checkpoint, little-endian:
//
//   "PEHCM1"                     magic (6 bytes)
//   u32  format version          (kCheckpointVersion)
//   u64  run seed
//   u32  space                   0 = euclidean, 1 = hyperbolic
//   u32  layer count L+1, then L+1 × u32 layer dims
//   u32  encoder layers
//   u32  classes
//   f64  curvature
//   parameters                   per tensor: u64 count, count × f64
//   u64  Adam step, then first- and second-moment tensors (same layout)
//   f64  d0 d1 d2 d3 beta, i32 last reinit epoch
//   u32  completed epochs

#include <cstdint>
#include <string>
#include <string_view>

#include "pehcm/errors.hpp"
#include "pehcm/hcm_loss.hpp"
#include "pehcm/io.hpp"
#include "pehcm/network.hpp"

namespace pehcm {

inline constexpr std::string_view kCheckpointMagic = "PEHCM1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  AdamState adam;
  TargetDistances targets;
  std::uint64_t seed = 0;
  std::uint32_t epochs_completed = 0;
};

namespace detail {

inline void write_tensors(io::ByteWriter& w, Model& m) {
  for (auto& t : m.tensors()) {
    w.u64(t.values.size());
    for (double x : t.values) w.f64(x);
  }
}

inline void read_tensors(io::ByteReader& r, Model& m) {
  for (auto& t : m.tensors()) {
    const std::uint64_t n = r.u64();
    if (n != t.values.size()) throw CheckpointError("tensor " + t.name + " has unexpected size");
    for (double& x : t.values) x = r.f64();
  }
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck_in) {
  Checkpoint ck = ck_in;
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(ck.seed);
  w.u32(ck.model.space == Space::hyperbolic ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(ck.model.spec.layer_dims.size()));
  for (int d : ck.model.spec.layer_dims) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(ck.model.spec.encoder_layers));
  w.u32(static_cast<std::uint32_t>(ck.model.num_classes()));
  w.f64(ck.model.curvature().value());
  detail::write_tensors(w, ck.model);
  w.u64(ck.adam.step);
  detail::write_tensors(w, ck.adam.first);
  detail::write_tensors(w, ck.adam.second);
  w.f64(ck.targets.d0);
  w.f64(ck.targets.d1);
  w.f64(ck.targets.d2);
  w.f64(ck.targets.d3);
  w.f64(ck.targets.beta);
  w.i32(ck.targets.last_reinit_epoch);
  w.u32(ck.epochs_completed);
  return w.str();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() || !bytes.starts_with("PEHCM")) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  if (!bytes.starts_with(kCheckpointMagic)) {
    throw CheckpointError("checkpoint magic '" + std::string(bytes.substr(0, 6)) + "' does not match supported '" +
                          std::string(kCheckpointMagic) + "'");
  }
  io::ByteReader r(bytes);
  r.bytes(kCheckpointMagic.size());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.seed = r.u64();
  const Space space = r.u32() == 1 ? Space::hyperbolic : Space::euclidean;
  MlpSpec spec;
  const std::uint32_t n_dims = r.u32();
  if (n_dims < 2 || n_dims > 64) throw CheckpointError("implausible layer count");
  for (std::uint32_t i = 0; i < n_dims; ++i) spec.layer_dims.push_back(static_cast<int>(r.u32()));
  spec.encoder_layers = static_cast<int>(r.u32());
  const int classes = static_cast<int>(r.u32());
  const double c = r.f64();
  try {
    spec.validate();
  } catch (const Error& e) {
    throw CheckpointError(std::string("bad network spec: ") + e.what());
  }
  std::mt19937_64 dummy(0);
  ck.model = Model::init(spec, space, classes, Curvature(c), dummy);
  detail::read_tensors(r, ck.model);
  ck.adam = AdamState::for_model(ck.model);
  ck.adam.step = r.u64();
  detail::read_tensors(r, ck.adam.first);
  detail::read_tensors(r, ck.adam.second);
  ck.targets.d0 = r.f64();
  ck.targets.d1 = r.f64();
  ck.targets.d2 = r.f64();
  ck.targets.d3 = r.f64();
  ck.targets.beta = r.f64();
  ck.targets.last_reinit_epoch = r.i32();
  ck.epochs_completed = r.u32();
  if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  io::write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace pehcm
