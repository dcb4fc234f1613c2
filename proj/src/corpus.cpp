#include "wsl/corpus.hpp"

#include <sstream>

#include "wsl/error.hpp"

namespace wsl::corpus {
namespace {

constexpr const char* kColumns = "id\tt_eff\tlog_g\tfe_h\tc_h\trv\tsnr\tclass\tsplit";

double parse_number(const std::string& field, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw IntegrityError(where + ": malformed number '" + field + "'");
  }
}

}  // namespace

std::size_t Manifest::width() const {
  const long long w = header.get_int("width", 0);
  if (w <= 0) throw IntegrityError("manifest header lacks a positive width");
  return static_cast<std::size_t>(w);
}

std::string Manifest::data_file() const {
  const auto f = header.get_string("data_file", "");
  if (f.empty() || f.find('/') != std::string::npos) throw IntegrityError("manifest header lacks a valid data_file");
  return f;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ostringstream out;
  out << "# wsl-manifest v1\n";
  for (const auto& [k, v] : m.header.entries()) out << "# " << k << "=" << v << "\n";
  out << kColumns << "\n";
  for (const auto& r : m.records) {
    out << r.id << '\t' << io::format_double(r.params.t_eff) << '\t' << io::format_double(r.params.log_g) << '\t'
        << io::format_double(r.params.fe_h) << '\t' << io::format_double(r.params.c_h) << '\t'
        << io::format_double(r.params.rv) << '\t' << io::format_double(r.snr) << '\t' << static_cast<int>(r.label)
        << '\t' << catalog::split_name(r.split) << '\n';
  }
  io::write_text(path, out.str());
}

Manifest read_manifest(const std::filesystem::path& path) {
  const auto text = io::read_text(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "# wsl-manifest v1") {
    throw IntegrityError(path.string() + ": not a manifest file");
  }
  Manifest m;
  std::size_t lineno = 1;
  bool columns_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw IntegrityError(where + ": malformed header line");
      m.header.set(line.substr(2, eq - 2), line.substr(eq + 1));
      continue;
    }
    if (!columns_seen) {
      if (line != kColumns) throw IntegrityError(where + ": unexpected column header");
      columns_seen = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() != 9) throw IntegrityError(where + ": expected 9 fields, found " + std::to_string(f.size()));
    Record r;
    r.id = static_cast<std::uint64_t>(parse_number(f[0], where));
    r.params.t_eff = parse_number(f[1], where);
    r.params.log_g = parse_number(f[2], where);
    r.params.fe_h = parse_number(f[3], where);
    r.params.c_h = parse_number(f[4], where);
    r.params.rv = parse_number(f[5], where);
    r.snr = parse_number(f[6], where);
    try {
      r.label = catalog::label_from_code(static_cast<int>(parse_number(f[7], where)));
      r.split = catalog::parse_split(f[8]);
    } catch (const ValidationError& e) {
      throw IntegrityError(where + ": " + e.what());
    }
    m.records.push_back(r);
  }
  if (!columns_seen) throw IntegrityError(path.string() + ": missing column header");
  return m;
}

std::span<const double> Corpus::row(std::size_t i) const {
  const std::size_t w = width();
  return std::span<const double>(values).subspan(i * w, w);
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.manifest = read_manifest(dir / kManifestName);
  std::vector<std::string> names;
  names.reserve(c.size());
  for (const auto& r : c.manifest.records) names.push_back("id " + std::to_string(r.id));
  c.values = io::read_f32_matrix(dir / c.manifest.data_file(), c.size(), c.width(), names);
  return c;
}

std::vector<std::filesystem::path> save_corpus(const std::filesystem::path& dir, const Corpus& c) {
  if (c.values.size() != c.size() * c.width()) throw ValidationError("corpus matrix does not match manifest");
  const auto manifest = dir / kManifestName;
  const auto data = dir / c.manifest.data_file();
  write_manifest(manifest, c.manifest);
  io::write_f32_matrix(data, c.values);
  return {manifest, data};
}

std::vector<std::size_t> indices_of(const Manifest& m, catalog::Split split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (m.records[i].split == split) out.push_back(i);
  }
  return out;
}

}  // namespace wsl::corpus
