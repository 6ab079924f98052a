#include "changediff/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "changediff/errors.hpp"

namespace changediff {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'C', 'D', 'C', 'K', 'P', 'T', '1', '\n'};
constexpr int kVersion = 1;

json config_to_json(const DenoiserConfig& c) {
  return json{{"latent_channels", c.latent_channels},
              {"latent_h", c.latent_h},
              {"latent_w", c.latent_w},
              {"base_channels", c.base_channels},
              {"channel_mult", c.channel_mult},
              {"attention_resolutions", c.attention_resolutions},
              {"heads", c.heads},
              {"text_dim", c.text_dim},
              {"context_len", c.context_len},
              {"time_dim", c.time_dim},
              {"norm_groups", c.norm_groups},
              {"coord_features", c.coord_features},
              {"side_network", c.side_network}};
}

DenoiserConfig config_from_json(const json& j) {
  DenoiserConfig c;
  c.latent_channels = j.at("latent_channels");
  c.latent_h = j.at("latent_h");
  c.latent_w = j.at("latent_w");
  c.base_channels = j.at("base_channels");
  c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  c.attention_resolutions = j.at("attention_resolutions").get<std::vector<int>>();
  c.heads = j.at("heads");
  c.text_dim = j.at("text_dim");
  c.context_len = j.at("context_len");
  c.time_dim = j.at("time_dim");
  c.norm_groups = j.at("norm_groups");
  c.coord_features = j.at("coord_features");
  c.side_network = j.at("side_network");
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model) {
  json header;
  header["format"] = "changediff-checkpoint";
  header["version"] = kVersion;
  header["config"] = config_to_json(model.config());
  header["schedule"] = {{"T", model.schedule().T},
                        {"beta_start", model.schedule().beta_start},
                        {"beta_end", model.schedule().beta_end}};
  header["tokenizer_id"] = model.tokenizer().id();
  header["class_names"] = model.tokenizer().class_names();
  json params = json::array();
  for (ad::Param* p : model.params())
    params.push_back({{"name", p->name}, {"shape", p->value.shape}});
  header["params"] = std::move(params);

  std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  uint64_t len = header_str.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_str.data(), static_cast<std::streamsize>(len));
  for (ad::Param* p : model.params())
    out.write(reinterpret_cast<const char*>(p->value.data.data()),
              static_cast<std::streamsize>(p->value.data.size() * sizeof(double)));
  if (!out) fail(ErrorKind::Io, "checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    fail(ErrorKind::Parse, path + ": not a checkpoint file");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len == 0 || len > (64u << 20))
    fail(ErrorKind::Parse, path + ": bad header length");
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorKind::Parse, path + ": truncated header");

  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, path + ": header is not valid JSON: " + e.what());
  }
  if (header.value("format", "") != "changediff-checkpoint")
    fail(ErrorKind::Parse, path + ": unknown container format");
  if (header.value("version", -1) != kVersion)
    fail(ErrorKind::Parse, path + ": unsupported checkpoint version");

  DenoiserConfig config = config_from_json(header.at("config"));
  const json& sched = header.at("schedule");
  NoiseSchedule schedule =
      make_schedule(sched.at("T"), sched.at("beta_start"), sched.at("beta_end"));
  std::vector<std::string> class_names =
      header.at("class_names").get<std::vector<std::string>>();

  Model model(config, schedule, class_names, /*init_seed=*/0);
  if (header.at("tokenizer_id") != model.tokenizer().id())
    fail(ErrorKind::Parse, path + ": tokenizer id mismatch");

  const json& params = header.at("params");
  auto live = model.params();
  if (params.size() != live.size())
    fail(ErrorKind::Parse, path + ": parameter manifest size mismatch");
  for (size_t i = 0; i < live.size(); ++i) {
    if (params[i].at("name") != live[i]->name)
      fail(ErrorKind::Parse, path + ": parameter order mismatch at '" +
                                 live[i]->name + "'");
    if (params[i].at("shape").get<std::vector<int>>() != live[i]->value.shape)
      fail(ErrorKind::Parse, path + ": shape mismatch for '" + live[i]->name + "'");
    in.read(reinterpret_cast<char*>(live[i]->value.data.data()),
            static_cast<std::streamsize>(live[i]->value.data.size() * sizeof(double)));
    if (!in) fail(ErrorKind::Parse, path + ": truncated blob for '" + live[i]->name + "'");
  }
  return model;
}

}  // namespace changediff
