#include "wsl/checkpoint.hpp"

#include <sstream>

#include "wsl/error.hpp"

namespace wsl::train {
namespace {

constexpr std::string_view kMagic = "wsl-checkpoint v1";
constexpr std::string_view kEnd = "end-header\n";

void append_tensor(std::string& out, const tc::NamedTensor& t) {
  io::append_u32(out, static_cast<std::uint32_t>(t.name.size()));
  out += t.name;
  const auto& shape = t.tensor.shape();
  io::append_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) io::append_u64(out, d);
  for (double v : t.tensor.data()) io::append_f64(out, v);
}

}  // namespace

std::string serialize_checkpoint(const pdvfn::Model& model, const io::KeyValue& meta) {
  std::string payload;
  std::size_t records = 0;
  for (const auto* list : {&model.params().params(), &model.params().buffers()}) {
    for (const auto& t : *list) {
      append_tensor(payload, t);
      ++records;
    }
  }
  std::ostringstream head;
  head << kMagic << "\n";
  const auto model_kv = model.config().to_kv();
  for (const auto& [k, v] : model_kv.entries()) head << "model." << k << "=" << v << "\n";
  for (const auto& [k, v] : meta.entries()) head << "meta." << k << "=" << v << "\n";
  head << "records=" << records << "\n";
  head << "payload_bytes=" << payload.size() << "\n";
  head << "payload_sha256=" << io::sha256_hex(payload) << "\n";
  head << kEnd;
  return head.str() + payload;
}

void save_checkpoint(const std::filesystem::path& path, const pdvfn::Model& model, const io::KeyValue& meta) {
  io::write_text(path, serialize_checkpoint(model, meta));
}

LoadedCheckpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
  const auto end = bytes.find(kEnd);
  if (bytes.rfind(kMagic, 0) != 0 || end == std::string::npos) {
    throw IntegrityError(origin + ": not a checkpoint file");
  }
  io::KeyValue model_kv, meta;
  std::size_t records = 0, payload_bytes = 0;
  std::string digest;
  std::istringstream head(bytes.substr(kMagic.size() + 1, end - kMagic.size() - 1));
  std::string line;
  while (std::getline(head, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IntegrityError(origin + ": malformed header line '" + line + "'");
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key.rfind("model.", 0) == 0) model_kv.set(key.substr(6), value);
    else if (key.rfind("meta.", 0) == 0) meta.set(key.substr(5), value);
    else if (key == "records") records = std::stoull(value);
    else if (key == "payload_bytes") payload_bytes = std::stoull(value);
    else if (key == "payload_sha256") digest = value;
    else throw IntegrityError(origin + ": unknown header key '" + key + "'");
  }
  const std::string_view payload = std::string_view(bytes).substr(end + kEnd.size());
  if (payload.size() != payload_bytes) throw IntegrityError(origin + ": truncated or padded payload");
  if (io::sha256_hex(payload) != digest) throw IntegrityError(origin + ": payload checksum mismatch");

  LoadedCheckpoint out;
  out.meta = meta;
  out.model = std::make_unique<pdvfn::Model>(pdvfn::PdvfnConfig::from_kv(model_kv));
  auto& ps = out.model->params();
  const std::size_t expected = ps.params().size() + ps.buffers().size();
  if (records != expected) {
    throw IntegrityError(origin + ": " + std::to_string(records) + " tensors stored, model needs " +
                         std::to_string(expected));
  }
  io::ByteReader reader(payload);
  for (std::size_t r = 0; r < records; ++r) {
    const std::string name = reader.bytes(reader.u32());
    tc::Shape shape(reader.u32());
    for (auto& d : shape) d = reader.u64();
    tc::Tensor t;
    try {
      t = ps.find(name);
    } catch (const ValidationError&) {
      throw IntegrityError(origin + ": unexpected tensor '" + name + "'");
    }
    if (t.shape() != shape) {
      throw IntegrityError(origin + ": tensor '" + name + "' has shape " + tc::shape_str(shape) + ", model expects " +
                           tc::shape_str(t.shape()));
    }
    for (double& v : t.mutable_data()) v = reader.f64();
  }
  if (!reader.done()) throw IntegrityError(origin + ": trailing bytes after last tensor");
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(io::read_text(path), path.string());
}

}  // namespace wsl::train
