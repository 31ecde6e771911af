#include <bit>
#include <cstring>
#include <stdexcept>

#include "json.hpp"
#include "pplus/fsutil.hpp"
#include "pplus/model.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blocks are little-endian f64; big-endian hosts are unsupported");

namespace pplus {

using nlohmann::json;

namespace {

constexpr char kMagic[6] = {'P', 'P', 'L', 'U', 'S', '1'};

json unet_to_json(const UNetConfig& u) {
  json levels = json::array();
  for (const auto& l : u.levels) {
    levels.push_back({{"res", l.sd_res}, {"channels", l.channels}, {"blocks", l.blocks}, {"up_ca", l.up_ca}});
  }
  return json{{"preset", u.preset},
              {"image_size", u.image_size},
              {"image_channels", u.image_channels},
              {"levels", levels},
              {"bottom_channels", u.bottom_channels},
              {"bottom_blocks", u.bottom_blocks},
              {"d_ctx", u.d_ctx},
              {"heads", u.heads},
              {"time_dim", u.time_dim},
              {"fourier_dim", u.fourier_dim},
              {"gn_groups", u.gn_groups}};
}

UNetConfig unet_from_json(const json& j) {
  UNetConfig u;
  u.preset = j.at("preset").get<std::string>();
  u.image_size = j.at("image_size").get<int64_t>();
  u.image_channels = j.at("image_channels").get<int64_t>();
  for (const auto& l : j.at("levels")) {
    u.levels.push_back(LevelConfig{l.at("res").get<int64_t>(), l.at("channels").get<int64_t>(),
                                   l.at("blocks").get<int>(), l.at("up_ca").get<int>()});
  }
  u.bottom_channels = j.at("bottom_channels").get<int64_t>();
  u.bottom_blocks = j.at("bottom_blocks").get<int>();
  u.d_ctx = j.at("d_ctx").get<int64_t>();
  u.heads = j.at("heads").get<int64_t>();
  u.time_dim = j.at("time_dim").get<int64_t>();
  u.fourier_dim = j.at("fourier_dim").get<int64_t>();
  u.gn_groups = j.at("gn_groups").get<int64_t>();
  return u;
}

}  // namespace

void Model::save(const std::string& path) const {
  json header;
  header["schema"] = 1;
  header["enc"] = {{"seq_len", cfg.enc.seq_len},
                   {"d", cfg.enc.d},
                   {"heads", cfg.enc.heads},
                   {"blocks", cfg.enc.blocks},
                   {"mlp_hidden", cfg.enc.mlp_hidden}};
  header["unet"] = unet_to_json(cfg.unet);
  header["schedule"] = {{"T", cfg.T}, {"beta_lo", cfg.beta_lo}, {"beta_hi", cfg.beta_hi}};
  std::vector<std::string> words(vocab.names().begin() + 4, vocab.names().begin() + vocab.natural_size());
  header["vocab"] = words;
  json reg = json::array();
  for (const auto& l : registry.layers()) reg.push_back(l.str());
  header["registry"] = reg;
  json plist = json::array();
  for (size_t i = 0; i < params.size(); ++i) {
    const Param& p = params.param(i);
    plist.push_back({{"name", p.name}, {"shape", p.shape}});
  }
  header["params"] = plist;
  header["build_seed"] = build_seed;

  const std::string hs = header.dump();
  std::string bytes;
  bytes.reserve(hs.size() + 14 + static_cast<size_t>(params.total_elements()) * sizeof(double));
  bytes.append(kMagic, sizeof(kMagic));
  const uint64_t hlen = hs.size();
  bytes.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  bytes.append(hs);
  for (size_t i = 0; i < params.size(); ++i) {
    const Param& p = params.param(i);
    bytes.append(reinterpret_cast<const char*>(p.value->data()), p.value->size() * sizeof(double));
  }
  atomic_write(path, bytes);
}

Model Model::load(const std::string& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("cannot read checkpoint: " + std::string(e.what()));
  }
  if (bytes.size() < 14 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  }
  uint64_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + 6, sizeof(hlen));
  if (bytes.size() < 14 + hlen) throw std::runtime_error("truncated checkpoint header: " + path);
  json header = json::parse(bytes.substr(14, hlen));

  ModelConfig cfg;
  const json& e = header.at("enc");
  cfg.enc = EncoderConfig{e.at("seq_len").get<int64_t>(), e.at("d").get<int64_t>(),
                          e.at("heads").get<int64_t>(), e.at("blocks").get<int64_t>(),
                          e.at("mlp_hidden").get<int64_t>()};
  cfg.unet = unet_from_json(header.at("unet"));
  cfg.T = header.at("schedule").at("T").get<int64_t>();
  cfg.beta_lo = header.at("schedule").at("beta_lo").get<double>();
  cfg.beta_hi = header.at("schedule").at("beta_hi").get<double>();

  Vocabulary vocab = Vocabulary::from_words(header.at("vocab").get<std::vector<std::string>>());
  Model m = Model::build(std::move(vocab), cfg, header.value("build_seed", uint64_t{0}));

  // registry echo must match the topology we just rebuilt
  std::vector<std::string> reg = header.at("registry").get<std::vector<std::string>>();
  if (static_cast<int64_t>(reg.size()) != m.registry.size()) {
    throw std::runtime_error("checkpoint registry size mismatch");
  }
  for (size_t i = 0; i < reg.size(); ++i) {
    if (LayerId::parse(reg[i]) != m.registry.at(static_cast<int64_t>(i))) {
      throw std::runtime_error("checkpoint registry mismatch at entry " + std::to_string(i));
    }
  }

  const json& plist = header.at("params");
  if (plist.size() != m.params.size()) throw std::runtime_error("checkpoint parameter list mismatch");
  size_t off = 14 + hlen;
  for (size_t i = 0; i < m.params.size(); ++i) {
    Param& p = m.params.param(i);
    if (plist[i].at("name").get<std::string>() != p.name ||
        plist[i].at("shape").get<Shape>() != p.shape) {
      throw std::runtime_error("checkpoint parameter mismatch at '" + p.name + "'");
    }
    const size_t nbytes = p.value->size() * sizeof(double);
    if (off + nbytes > bytes.size()) throw std::runtime_error("truncated checkpoint blocks: " + path);
    std::memcpy(p.value->data(), bytes.data() + off, nbytes);
    off += nbytes;
  }
  if (off != bytes.size()) throw std::runtime_error("trailing bytes in checkpoint: " + path);
  return m;
}

}  // namespace pplus
