#include "scriptseq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "scriptseq/errors.hpp"

namespace scriptseq {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'S', 'Q', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? 1 : 2;
}

class Writer {
 public:
  template <typename U>
  void pod(U value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void raw(const void* data, std::size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + size);
  }
  void string(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  template <typename T>
  void tensor(const std::string& name, const Mat<T>& m) {
    string(name);
    pod(dtype_code<T>());
    pod(std::uint32_t{2});
    pod(static_cast<std::uint64_t>(m.rows()));
    pod(static_cast<std::uint64_t>(m.cols()));
    raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(T));
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == size_; }

  void need(std::size_t n, const char* what) const {
    if (size_ - pos_ < n)
      throw CorruptCheckpoint(pos_, std::string("truncated while reading ") + what);
  }
  template <typename U>
  U pod(const char* what) {
    need(sizeof(U), what);
    U value;
    std::memcpy(&value, data_ + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }
  void raw(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::string string(const char* what) {
    const auto n = pod<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  template <typename T>
  std::pair<std::string, Mat<T>> tensor() {
    const std::size_t start = pos_;
    std::string name = string("tensor name");
    const auto dtype = pod<std::uint8_t>("tensor dtype");
    if (dtype != dtype_code<T>())
      throw CorruptCheckpoint(start, "tensor '" + name + "' has dtype code " +
                                         std::to_string(dtype) + ", expected " +
                                         std::to_string(dtype_code<T>()));
    const auto rank = pod<std::uint32_t>("tensor rank");
    if (rank != 2)
      throw CorruptCheckpoint(start, "tensor '" + name + "' has rank " + std::to_string(rank));
    const auto rows = pod<std::uint64_t>("tensor dims");
    const auto cols = pod<std::uint64_t>("tensor dims");
    if (rows > (1ULL << 31) || cols > (1ULL << 31))
      throw CorruptCheckpoint(start, "tensor '" + name + "' has implausible shape");
    const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(T);
    need(bytes, "tensor payload");
    Mat<T> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    raw(m.data(), bytes, "tensor payload");
    return {std::move(name), std::move(m)};
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint<T>& ckpt) {
  nlohmann::json header = {{"model", ckpt.config.to_json()}, {"meta", ckpt.meta}};
  header["optimizer"] = ckpt.optimizer ? nlohmann::json{{"step", ckpt.optimizer->step}}
                                       : nlohmann::json(nullptr);
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod(kVersion);
  const std::string js = header.dump();
  w.pod(static_cast<std::uint64_t>(js.size()));
  w.raw(js.data(), js.size());

  const std::size_t n = ckpt.params.size();
  const std::size_t count = ckpt.optimizer ? 3 * n : n;
  w.pod(static_cast<std::uint32_t>(count));
  for (const auto& t : ckpt.params.tensors) w.tensor<T>(t.name, t.value);
  if (ckpt.optimizer) {
    for (std::size_t i = 0; i < n; ++i)
      w.tensor<T>("adam.m." + ckpt.params.tensors[i].name, ckpt.optimizer->m.at(i));
    for (std::size_t i = 0; i < n; ++i)
      w.tensor<T>("adam.v." + ckpt.params.tensors[i].name, ckpt.optimizer->v.at(i));
  }
  const std::uint64_t h = fnv1a64(w.bytes().data(), w.bytes().size());
  w.pod(h);
  return std::move(w.bytes());
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t))
    throw CorruptCheckpoint(bytes.size(), "file too short");
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  Reader r(bytes.data(), body);

  char magic[8];
  r.raw(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CorruptCheckpoint(0, "bad magic bytes");
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kVersion)
    throw CorruptCheckpoint(8, "unsupported format version " + std::to_string(version));

  const std::size_t header_at = r.offset();
  const auto js_len = r.pod<std::uint64_t>("header length");
  r.need(static_cast<std::size_t>(js_len), "header");
  std::string js(static_cast<std::size_t>(js_len), '\0');
  r.raw(js.data(), js.size(), "header");

  Checkpoint<T> ckpt;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(js);
    ckpt.config = ModelConfig::from_json(header.at("model"));
    ckpt.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(header_at, std::string("bad header: ") + e.what());
  }

  const auto count = r.pod<std::uint32_t>("tensor count");
  std::vector<std::pair<std::string, Mat<T>>> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) tensors.push_back(r.tensor<T>());
  if (!r.at_end()) throw CorruptCheckpoint(r.offset(), "trailing bytes before checksum");

  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (stored != fnv1a64(bytes.data(), body))
    throw CorruptCheckpoint(body, "checksum mismatch");

  const bool has_opt = !header["optimizer"].is_null();
  const std::size_t n = has_opt ? count / 3 : count;
  if (has_opt && count % 3 != 0)
    throw CorruptCheckpoint(header_at, "optimizer tensors incomplete");
  for (std::size_t i = 0; i < n; ++i)
    ckpt.params.tensors.push_back({tensors[i].first, std::move(tensors[i].second)});
  if (has_opt) {
    AdamState<T> st;
    st.step = header["optimizer"].value("step", std::int64_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      if (tensors[n + i].first != "adam.m." + ckpt.params.tensors[i].name ||
          tensors[2 * n + i].first != "adam.v." + ckpt.params.tensors[i].name)
        throw CorruptCheckpoint(header_at, "optimizer tensor names out of order");
      st.m.push_back(std::move(tensors[n + i].second));
      st.v.push_back(std::move(tensors[2 * n + i].second));
    }
    ckpt.optimizer = std::move(st);
  }
  return ckpt;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write to '" + path.string() + "' failed");
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint<T>(bytes);
}

#define SCRIPTSEQ_INSTANTIATE(T)                                                       \
  template std::vector<std::uint8_t> serialize_checkpoint<T>(const Checkpoint<T>&);    \
  template Checkpoint<T> deserialize_checkpoint<T>(const std::vector<std::uint8_t>&);  \
  template void save_checkpoint<T>(const std::filesystem::path&, const Checkpoint<T>&); \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);

SCRIPTSEQ_INSTANTIATE(float)
SCRIPTSEQ_INSTANTIATE(double)

#undef SCRIPTSEQ_INSTANTIATE

}  // namespace scriptseq
