#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rfe/model/unet.hpp"

namespace rfe::model {
namespace {

constexpr const char* kTag = "RFE-CHECKPOINT 1";

std::string next_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(std::string("checkpoint: missing ") + what);
  return line;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Model& model) {
  const auto& c = model.config();
  const auto& p = model.parameters();
  out << kTag << '\n';
  out << "config " << c.input_channels << ' ' << c.depth << ' ' << c.base_channels << ' ' << c.embed_channels
      << ' ' << c.seed << '\n';
  out << "params " << p.size() << '\n';
  for (ad::ParamId i = 0; i < p.size(); ++i) {
    const auto& s = p.value(i).shape();
    out << p.name(i) << ' ' << s.height << ' ' << s.width << ' ' << s.channels << ' ' << s.batch << '\n';
  }
  out << "end\n";
  for (ad::ParamId i = 0; i < p.size(); ++i) write_t4f(out, p.value(i));
  if (!out) throw FormatError("checkpoint: write failed");
}

Model load_checkpoint(std::istream& in) {
  if (next_line(in, "format tag") != kTag) throw FormatError("checkpoint: bad format tag on line 1");
  ModelConfig cfg;
  {
    std::istringstream ls(next_line(in, "config line"));
    std::string key;
    if (!(ls >> key >> cfg.input_channels >> cfg.depth >> cfg.base_channels >> cfg.embed_channels >> cfg.seed) ||
        key != "config") {
      throw FormatError("checkpoint: malformed config line");
    }
  }
  std::size_t count = 0;
  {
    std::istringstream ls(next_line(in, "params line"));
    std::string key;
    if (!(ls >> key >> count) || key != "params") throw FormatError("checkpoint: malformed params line");
  }
  std::vector<std::pair<std::string, Shape4>> manifest;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ls(next_line(in, "parameter line"));
    std::string name;
    Shape4 s;
    if (!(ls >> name >> s.height >> s.width >> s.channels >> s.batch)) {
      throw FormatError("checkpoint: malformed parameter line " + std::to_string(i));
    }
    manifest.emplace_back(name, s);
  }
  if (next_line(in, "end marker") != "end") throw FormatError("checkpoint: missing end marker");
  ad::ParameterSet<float> params;
  for (const auto& [name, shape] : manifest) {
    const auto offset = static_cast<std::uint64_t>(in.tellg());
    Tensor4 t = read_t4f(in, offset);
    if (t.shape() != shape) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + to_string(t.shape()) +
                        ", manifest says " + to_string(shape));
    }
    params.add(name, std::move(t));
  }
  return Model(cfg, std::move(params));
}

void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
  save_checkpoint(out, model);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace rfe::model
