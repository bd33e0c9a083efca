#pragma once

// Flat binary parameter checkpoints.
//
//   "IALSEG01"
//   repeated until EOF:
//     u32 name length, name bytes,
//     u8  dtype tag (0 = f32, 1 = f64),
//     u32 rank, u64 dims[rank],
//     payload, little-endian, product(dims) elements
//
// All integers are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "ialseg/layers.hpp"

namespace ialseg {

inline constexpr char kCheckpointMagic[8] = {'I', 'A', 'L', 'S', 'E', 'G', '0', '1'};

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "checkpoint supports float and double");
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {
template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U take(std::istream& is, const char* what) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error(std::string("checkpoint truncated while reading ") + what);
  return v;
}
}  // namespace detail

template <typename T>
void write_checkpoint(std::ostream& os, const std::map<std::string, Tensor<T>>& tensors) {
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  for (const auto& [name, t] : tensors) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  }
  if (!os) throw Error("failed to write checkpoint");
}

/// Records stored in the other precision are converted on load.
template <typename T>
std::map<std::string, Tensor<T>> read_checkpoint(std::istream& is) {
  char magic[sizeof kCheckpointMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw Error("not a checkpoint file (bad magic)");
  std::map<std::string, Tensor<T>> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = detail::take<std::uint32_t>(is, "name length");
    if (len > (1u << 16)) throw Error("checkpoint record name too long");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw Error("checkpoint truncated while reading name");
    const auto tag = detail::take<std::uint8_t>(is, "dtype");
    if (tag > 1) throw Error("checkpoint record '" + name + "' has unknown dtype tag " + std::to_string(tag));
    const auto rank = detail::take<std::uint32_t>(is, "rank");
    if (rank > 4) throw Error("checkpoint record '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(detail::take<std::uint64_t>(is, "dims"));
    const std::size_t n = shape_numel(shape);
    std::vector<T> data(n);
    if (static_cast<DType>(tag) == dtype_of<T>()) {
      if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(T))))
        throw Error("checkpoint truncated in payload of '" + name + "'");
    } else if (static_cast<DType>(tag) == DType::F32) {
      std::vector<float> raw(n);
      if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(float))))
        throw Error("checkpoint truncated in payload of '" + name + "'");
      std::copy(raw.begin(), raw.end(), data.begin());
    } else {
      std::vector<double> raw(n);
      if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(double))))
        throw Error("checkpoint truncated in payload of '" + name + "'");
      std::transform(raw.begin(), raw.end(), data.begin(), [](double v) { return static_cast<T>(v); });
    }
    if (!out.emplace(name, Tensor<T>(std::move(shape), std::move(data))).second)
      throw Error("checkpoint repeats record '" + name + "'");
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params) {
  std::map<std::string, Tensor<T>> tensors;
  for (const auto& [name, p] : params) tensors.emplace(name, p.value);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_checkpoint(os, tensors);
}

/// Loads values into an existing store; names and shapes must match exactly.
template <typename T>
void load_checkpoint(const std::string& path, ParamStore<T>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path + "'");
  auto tensors = read_checkpoint<T>(is);
  if (tensors.size() != params.count())
    throw Error("checkpoint '" + path + "' holds " + std::to_string(tensors.size()) + " tensors, network has " +
                std::to_string(params.count()));
  for (auto& [name, p] : params) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("checkpoint '" + path + "' lacks parameter '" + name + "'");
    if (it->second.shape() != p.value.shape())
      throw Error("checkpoint parameter '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                  shape_str(p.value.shape()));
    p.value = std::move(it->second);
  }
}

}  // namespace ialseg
