#include "fuxi/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fuxi/errors.hpp"

namespace fuxi {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kVersion = "fuxi-checkpoint v1";

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFF) << (8 * (7 - i));
    return r;
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string shape_field(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_shape(const std::string& f, std::size_t lineno) {
  Shape s;
  std::stringstream ss(f);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || p != part.data() + part.size() || v == 0) throw ParseError("bad tensor shape", lineno);
    s.push_back(v);
  }
  if (s.empty()) throw ParseError("bad tensor shape", lineno);
  return s;
}

struct TensorEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t bytes = 0;
};

struct Manifest {
  ModelConfig config;
  std::uint64_t step = 0;
  std::map<std::string, std::string> metadata;
  std::vector<TensorEntry> tensors;
};

Manifest parse_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifestFile);
  if (!in) throw InputError("cannot open checkpoint manifest in " + dir.string());
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line) || line != kVersion) throw ParseError("not a checkpoint manifest", 1);
  ++lineno;
  bool have_step = false;
  std::map<std::string, std::string> cfg;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "step") {
      if (!(ls >> m.step)) throw ParseError("bad step", lineno);
      have_step = true;
    } else if (kind == "config") {
      std::string k, v;
      if (!(ls >> k >> v)) throw ParseError("bad config line", lineno);
      cfg[k] = v;
    } else if (kind == "meta") {
      std::string k, v;
      if (!(ls >> k >> v)) throw ParseError("bad meta line", lineno);
      m.metadata[k] = v;
    } else if (kind == "tensor") {
      TensorEntry e;
      std::string shape;
      if (!(ls >> e.name >> shape >> e.offset >> e.bytes)) throw ParseError("bad tensor line", lineno);
      e.shape = parse_shape(shape, lineno);
      if (e.bytes != shape_numel(e.shape) * 8) throw ParseError("tensor byte length does not match shape", lineno);
      m.tensors.push_back(std::move(e));
    } else {
      throw ParseError("unknown manifest entry '" + kind + "'", lineno);
    }
  }
  if (!have_step) throw ParseError("manifest missing step", lineno);
  auto need = [&](const char* key) -> const std::string& {
    auto it = cfg.find(key);
    if (it == cfg.end()) throw SchemaError(std::string("checkpoint manifest missing config ") + key);
    return it->second;
  };
  try {
    m.config.n_layers = std::stoull(need("n_layers"));
    m.config.d_model = std::stoull(need("d_model"));
    m.config.n_heads = std::stoull(need("n_heads"));
    m.config.d_ff = std::stoull(need("d_ff"));
    m.config.vocab_size = std::stoull(need("vocab_size"));
    m.config.context_len = std::stoull(need("context_len"));
    m.config.rope_theta = std::stod(need("rope_theta"));
    m.config.norm_eps = std::stod(need("norm_eps"));
  } catch (const std::logic_error&) {
    throw SchemaError("checkpoint manifest has a malformed config value");
  }
  m.config.validate();
  return m;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  ckpt.config.validate();
  const fs::path tmp = dir.parent_path() / (dir.filename().string() + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  std::ostringstream manifest;
  manifest << kVersion << '\n';
  manifest << "step " << ckpt.step << '\n';
  const auto& c = ckpt.config;
  manifest << "config n_layers " << c.n_layers << '\n'
           << "config d_model " << c.d_model << '\n'
           << "config n_heads " << c.n_heads << '\n'
           << "config d_ff " << c.d_ff << '\n'
           << "config vocab_size " << c.vocab_size << '\n'
           << "config context_len " << c.context_len << '\n'
           << "config rope_theta " << format_double(c.rope_theta) << '\n'
           << "config norm_eps " << format_double(c.norm_eps) << '\n';
  for (const auto& [k, v] : ckpt.metadata) manifest << "meta " << k << ' ' << v << '\n';

  std::ofstream blob(tmp / kTensorFile, std::ios::binary);
  if (!blob) throw InputError("cannot write checkpoint blob in " + tmp.string());
  std::uint64_t offset = 0;
  auto emit = [&](const std::string& name, const Array& t) {
    const std::uint64_t bytes = t.size() * 8;
    manifest << "tensor " << name << ' ' << shape_field(t.shape()) << ' ' << offset << ' ' << bytes << '\n';
    std::vector<std::uint64_t> words(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) words[i] = to_le(std::bit_cast<std::uint64_t>(t[i]));
    blob.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(bytes));
    offset += bytes;
  };
  for_each_tensor(ckpt.params, [&](const std::string& n, const Array& t, TensorRole) { emit(n, t); });
  for (const auto& [n, t] : ckpt.extra) emit(n, t);
  blob.close();
  if (!blob) throw InputError("failed writing checkpoint blob");
  {
    std::ofstream mf(tmp / kManifestFile, std::ios::binary);
    mf << manifest.str();
    if (!mf) throw InputError("failed writing checkpoint manifest");
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

ModelConfig read_checkpoint_config(const fs::path& dir) {
  return parse_manifest(dir).config;
}

Checkpoint load_checkpoint(const fs::path& dir) {
  Manifest m = parse_manifest(dir);
  std::ifstream blob(dir / kTensorFile, std::ios::binary);
  if (!blob) throw InputError("cannot open checkpoint blob in " + dir.string());
  std::map<std::string, Array> tensors;
  std::vector<std::string> order;
  for (const auto& e : m.tensors) {
    std::vector<std::uint64_t> words(shape_numel(e.shape));
    blob.seekg(static_cast<std::streamoff>(e.offset));
    blob.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(e.bytes));
    if (!blob) throw ParseError("checkpoint blob truncated at tensor " + e.name);
    std::vector<double> data(words.size());
    for (std::size_t i = 0; i < words.size(); ++i) data[i] = std::bit_cast<double>(to_le(words[i]));
    if (!tensors.emplace(e.name, Array(e.shape, std::move(data))).second) {
      throw SchemaError("duplicate tensor " + e.name);
    }
    order.push_back(e.name);
  }

  Checkpoint ck;
  ck.config = m.config;
  ck.step = m.step;
  ck.metadata = m.metadata;
  ck.params = Parameters::zeros(m.config);
  for_each_tensor(ck.params, [&](const std::string& n, Array& t, TensorRole) {
    auto it = tensors.find(n);
    if (it == tensors.end()) throw SchemaError("checkpoint missing tensor " + n);
    if (it->second.shape() != t.shape()) {
      throw SchemaError("tensor " + n + " has shape " + shape_to_string(it->second.shape()) + ", config implies " +
                        shape_to_string(t.shape()));
    }
    t = std::move(it->second);
    tensors.erase(it);
  });
  for (const auto& n : order) {
    auto it = tensors.find(n);
    if (it != tensors.end()) ck.extra.emplace_back(n, std::move(it->second));
  }
  return ck;
}

}  // namespace fuxi
