// SPDX-License-Identifier: Apache-2.0
#include "lister/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace lister::checkpoint {

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error("truncated tensor header");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

void put_f32(std::ostream& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void write_tensor(const std::filesystem::path& file, const Matrix& m) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  put_u64(out, 2);
  put_u64(out, static_cast<std::uint64_t>(m.rows()));
  put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.size(); ++i) put_f32(out, static_cast<float>(m.data()[i]));
  if (!out) throw Error("write failed: " + file.string());
}

Matrix read_tensor(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot read " + file.string());
  const std::uint64_t rank = get_u64(in);
  if (rank < 1 || rank > 2) throw Error(file.string() + ": unsupported rank " + std::to_string(rank));
  std::uint64_t rows = 1, cols = get_u64(in);
  if (rank == 2) {
    rows = cols;
    cols = get_u64(in);
  }
  if (rows > (1u << 24) || cols > (1u << 24)) throw Error(file.string() + ": implausible dims");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  std::vector<unsigned char> bytes(static_cast<std::size_t>(m.size()) * 4);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw Error(file.string() + ": truncated tensor data");
  for (Index i = 0; i < m.size(); ++i) {
    const unsigned char* b = bytes.data() + 4 * i;
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    m.data()[i] = std::bit_cast<float>(bits);
  }
  return m;
}

std::string blob_name(const std::string& parameter_name) { return parameter_name + ".bin"; }

void save(const std::filesystem::path& dir, const std::vector<const ad::Parameter*>& params, nlohmann::json meta) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json entries = nlohmann::json::array();
  for (const ad::Parameter* p : params) {
    write_tensor(dir / blob_name(p->name), p->value);
    entries.push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}, {"file", blob_name(p->name)}});
  }
  meta["format"] = "lister-checkpoint-v1";
  meta["dtype"] = "float32-le";
  meta["parameters"] = entries;
  std::ofstream out(dir / "meta.json");
  if (!out) throw Error("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

Loaded load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw Error("no checkpoint at " + dir.string() + " (meta.json missing)");
  Loaded l;
  try {
    l.meta = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw Error("malformed meta.json in " + dir.string() + ": " + e.what());
  }
  if (!l.meta.contains("parameters")) throw Error("meta.json lists no parameters");
  for (const auto& e : l.meta["parameters"]) {
    const std::string name = e.at("name").get<std::string>();
    Matrix m = read_tensor(dir / e.at("file").get<std::string>());
    const auto shape = e.at("shape").get<std::vector<Index>>();
    if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
      throw Error("blob shape of " + name + " disagrees with meta.json");
    l.tensors.emplace(name, std::move(m));
  }
  return l;
}

void assign(const Loaded& loaded, const std::vector<ad::Parameter*>& params) {
  for (ad::Parameter* p : params) {
    auto it = loaded.tensors.find(p->name);
    if (it == loaded.tensors.end()) throw Error("checkpoint has no tensor " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw Error("checkpoint tensor " + p->name + " has the wrong shape");
    p->value = it->second;
  }
}

}  // namespace lister::checkpoint
