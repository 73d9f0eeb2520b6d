#include "vrg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "vrg/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

using nlohmann::json;

namespace vrg::ckpt {

namespace {

constexpr char kMagic[8] = {'V', 'R', 'G', 'C', 'K', 'P', 'T', '1'};

json arch_to_json(const ArchConfig& a) {
  return json{{"image_channels", a.image_channels},
              {"patch_size", a.patch_size},
              {"latent_dim", a.latent_dim},
              {"rnet_channels", a.rnet_channels},
              {"disc_channels", a.disc_channels},
              {"bnet_width", a.bnet_width},
              {"bnet_stages", a.bnet_stages},
              {"bnet_resblocks", a.bnet_resblocks},
              {"leaky_slope", a.leaky_slope},
              {"attention_blocks", a.attention_blocks}};
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.image_channels = j.at("image_channels").get<int64_t>();
  a.patch_size = j.at("patch_size").get<int64_t>();
  a.latent_dim = j.at("latent_dim").get<int64_t>();
  a.rnet_channels = j.at("rnet_channels").get<std::vector<int64_t>>();
  a.disc_channels = j.at("disc_channels").get<std::vector<int64_t>>();
  a.bnet_width = j.at("bnet_width").get<int64_t>();
  a.bnet_stages = j.at("bnet_stages").get<int64_t>();
  a.bnet_resblocks = j.at("bnet_resblocks").get<int64_t>();
  a.leaky_slope = j.at("leaky_slope").get<double>();
  a.attention_blocks = j.at("attention_blocks").get<int64_t>();
  return a;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct SectionRef {
  const char* name;
  const std::map<std::string, Tensor>* tensors;
};

}  // namespace

uint64_t arch_digest(const ArchConfig& a) { return fnv1a(arch_to_json(a).dump()); }

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const SectionRef sections[] = {
      {"params", &c.params}, {"buffers", &c.buffers}, {"opt", &c.opt}};

  json dir = json::array();
  for (const auto& sec : sections)
    for (const auto& [name, t] : *sec.tensors)
      dir.push_back(json{{"section", sec.name},
                         {"name", name},
                         {"shape", t.shape()}});

  json header{{"version", c.version},
              {"arch", arch_to_json(c.arch)},
              {"arch_digest", hex64(arch_digest(c.arch))},
              {"variant", c.variant},
              {"train_digest", c.train_digest},
              {"epoch", c.epoch},
              {"seed", c.seed},
              {"counters", c.counters},
              {"tensors", dir}};
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  VRG_CHECK(out.good(), "cannot write checkpoint: ", path);
  out.write(kMagic, sizeof(kMagic));
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& sec : sections)
    for (const auto& [name, t] : *sec.tensors)
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
  out.close();
  VRG_CHECK(out.good(), "short write for checkpoint: ", path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) fail<CheckpointError>("cannot open checkpoint: ", path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in.good() || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail<CheckpointError>("not a checkpoint file: ", path);

  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  VRG_CHECK(in.good() && hlen > 0 && hlen < (1ull << 30),
            "corrupt checkpoint header length in ", path);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in.good()) fail<CheckpointError>("truncated checkpoint header: ", path);

  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    fail<CheckpointError>("bad checkpoint header in ", path, ": ", e.what());
  }

  Checkpoint c;
  c.version = header.at("version").get<int64_t>();
  if (c.version != 1)
    fail<CheckpointError>("unsupported checkpoint version ", c.version,
                          " in ", path);
  c.arch = arch_from_json(header.at("arch"));
  const std::string stored = header.at("arch_digest").get<std::string>();
  if (stored != hex64(arch_digest(c.arch)))
    fail<CheckpointError>("architecture digest mismatch in ", path,
                          " (tampered or corrupted header)");
  c.variant = header.at("variant").get<std::string>();
  c.train_digest = header.at("train_digest").get<std::string>();
  c.epoch = header.at("epoch").get<int64_t>();
  c.seed = header.at("seed").get<uint64_t>();
  for (const auto& [k, v] : header.at("counters").items())
    c.counters[k] = v.get<int64_t>();

  for (const auto& entry : header.at("tensors")) {
    const std::string sec = entry.at("section").get<std::string>();
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in.good())
      fail<CheckpointError>("truncated tensor ", sec, "/", name, " in ", path);
    auto& dst = sec == "params" ? c.params
                : sec == "buffers" ? c.buffers
                : sec == "opt" ? c.opt
                : (fail<CheckpointError>("unknown section ", sec, " in ", path),
                   c.params);
    dst[name] = std::move(t);
  }
  in.peek();
  if (!in.eof())
    fail<CheckpointError>("trailing bytes after tensor data in ", path);
  return c;
}

namespace {

struct NetRef {
  const char* prefix;
  const nn::ParamStore* store;
};

std::vector<NetRef> net_refs(const Model& m) {
  return {{"rnet.", &m.rnet.store()},
          {"bnet.", &m.bnet.store()},
          {"gen.", &m.gen.store()},
          {"critic.", &m.critic.store()}};
}

}  // namespace

void store_model(Checkpoint& c, const Model& m) {
  c.arch = m.arch;
  for (const auto& net : net_refs(m)) {
    for (const auto& [name, var] : net.store->params())
      c.params[net.prefix + name] = var->value.clone();
    for (const auto& [name, t] : net.store->buffers())
      c.buffers[net.prefix + name] = t.clone();
  }
}

ApplyReport apply_model(const Checkpoint& c, Model& m, bool skip_bnet) {
  VRG_CHECK(c.arch == m.arch,
            "checkpoint architecture does not match the model");
  ApplyReport rep;
  std::vector<NetRef> nets = net_refs(m);
  auto find_store = [&](const std::string& qualified,
                        std::string& local) -> nn::ParamStore* {
    for (const auto& net : nets)
      if (qualified.starts_with(net.prefix)) {
        local = qualified.substr(std::strlen(net.prefix));
        return const_cast<nn::ParamStore*>(net.store);
      }
    fail<CheckpointError>("unknown network prefix in entry: ", qualified);
  };
  for (const auto& [qualified, t] : c.params) {
    if (skip_bnet && qualified.starts_with("bnet.")) {
      ++rep.skipped_bnet;
      continue;
    }
    std::string local;
    find_store(qualified, local)->load_param(local, t);
    ++rep.params_loaded;
  }
  for (const auto& [qualified, t] : c.buffers) {
    if (skip_bnet && qualified.starts_with("bnet.")) {
      ++rep.skipped_bnet;
      continue;
    }
    std::string local;
    find_store(qualified, local)->set_buffer(local, t.clone());
    ++rep.buffers_loaded;
  }
  return rep;
}

}  // namespace vrg::ckpt
