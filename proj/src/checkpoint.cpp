#include "mtse/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace mtse {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'M', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

const char* cell_kind_name(CellKind k) {
  switch (k) {
    case CellKind::kRnn: return "rnn";
    case CellKind::kLstm: return "lstm";
    case CellKind::kGru: return "gru";
  }
  return "?";
}

CellKind cell_kind_from(const std::string& s) {
  if (s == "rnn") return CellKind::kRnn;
  if (s == "lstm") return CellKind::kLstm;
  if (s == "gru") return CellKind::kGru;
  throw ConfigError("config: unknown cell kind: " + s);
}

json config_json(const EncoderConfig& cfg) {
  return json{
      {"cell",
       {{"kind", cell_kind_name(cfg.cell.kind)},
        {"arrangement",
         cfg.cell.arrangement == Arrangement::kConv ? "conv" : "dense"},
        {"r", cfg.cell.r},
        {"d", cfg.cell.d},
        {"k", cfg.cell.k},
        {"forget_bias", cfg.cell.forget_bias}}},
      {"n_classes", cfg.n_classes},
      {"k_class", cfg.k_class},
      {"activation",
       cfg.activation == HeadActivation::kRelu ? "relu" : "leaky_relu"},
      {"leaky_alpha", cfg.leaky_alpha}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig cfg;
  const json& cell = j.at("cell");
  cfg.cell.kind = cell_kind_from(cell.at("kind").get<std::string>());
  cfg.cell.arrangement = cell.at("arrangement").get<std::string>() == "dense"
                             ? Arrangement::kDense
                             : Arrangement::kConv;
  cfg.cell.r = cell.at("r").get<int>();
  cfg.cell.d = cell.at("d").get<int>();
  cfg.cell.k = cell.at("k").get<int>();
  cfg.cell.forget_bias = cell.at("forget_bias").get<double>();
  cfg.n_classes = j.at("n_classes").get<int>();
  cfg.k_class = j.at("k_class").get<int>();
  cfg.activation = j.at("activation").get<std::string>() == "relu"
                       ? HeadActivation::kRelu
                       : HeadActivation::kLeakyRelu;
  cfg.leaky_alpha = j.at("leaky_alpha").get<double>();
  return cfg;
}

void write_record(std::ofstream& out, const std::string& name,
                  const Tensor& t) {
  const std::uint16_t len = static_cast<std::uint16_t>(name.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(name.data(), len);
  const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  out.write(reinterpret_cast<const char*>(&rank), 1);
  for (int a = 0; a < t.rank(); ++a) {
    const std::uint32_t e = static_cast<std::uint32_t>(t.extent(a));
    out.write(reinterpret_cast<const char*>(&e), sizeof(e));
  }
  std::vector<float> payload(t.size());
  for (std::size_t i = 0; i < t.size(); ++i)
    payload[i] = static_cast<float>(t[i]);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

bool read_record(std::ifstream& in, std::string& name, Tensor& t) {
  std::uint16_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (in.eof()) return false;
  if (!in) throw DataError("checkpoint: truncated record");
  name.resize(len);
  in.read(name.data(), len);
  std::uint8_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), 1);
  if (!in || rank < 1 || rank > 5)
    throw DataError("checkpoint: bad record rank");
  std::vector<int> shape;
  for (int a = 0; a < rank; ++a) {
    std::uint32_t e = 0;
    in.read(reinterpret_cast<char*>(&e), sizeof(e));
    if (!in || e == 0) throw DataError("checkpoint: bad record extent");
    shape.push_back(static_cast<int>(e));
  }
  std::vector<float> payload(Tensor::numel(shape));
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!in) throw DataError("checkpoint: truncated payload");
  std::vector<double> data(payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i)
    data[i] = static_cast<double>(payload[i]);
  t = Tensor::from_data(std::move(shape), std::move(data));
  return true;
}

}  // namespace

std::string encoder_config_to_json(const EncoderConfig& cfg) {
  return config_json(cfg).dump();
}

EncoderConfig encoder_config_from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config: invalid JSON");
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const EncoderConfig& cfg,
                     const EncoderParams& params, const OptimizerState* opt,
                     long step, const std::string& metrics_json) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open for writing: " + path);
  out.write(kMagic, 4);
  const std::uint32_t version = kVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));

  json header{{"config", config_json(cfg)},
              {"step", step},
              {"has_optimizer", opt != nullptr && !opt->m.empty()}};
  json metrics = json::parse(metrics_json, nullptr, false);
  header["metrics"] = metrics.is_discarded() ? json::object() : metrics;
  const std::string header_text = header.dump();
  const std::uint32_t header_len =
      static_cast<std::uint32_t>(header_text.size());
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_text.data(), header_len);

  for (const Parameter* p : params.all()) write_record(out, p->name, p->value);
  write_record(out, "head.bn.running_mean", params.bn_stats.mean);
  write_record(out, "head.bn.running_var", params.bn_stats.var);
  if (opt && !opt->m.empty()) {
    const auto plist = params.all();
    for (std::size_t i = 0; i < plist.size(); ++i) {
      write_record(out, "opt.m." + plist[i]->name, opt->m[i]);
      write_record(out, "opt.v." + plist[i]->name, opt->v[i]);
    }
  }
  if (!out) throw DataError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kVersion)
    throw DataError("checkpoint: unsupported version");

  std::uint32_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in) throw DataError("checkpoint: truncated header");
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), header_len);
  if (!in) throw DataError("checkpoint: truncated header");

  json header = json::parse(header_text, nullptr, false);
  if (header.is_discarded()) throw DataError("checkpoint: bad header JSON");

  Checkpoint ck;
  try {
    ck.config = config_from_json(header.at("config"));
    ck.step = header.at("step").get<long>();
    ck.metrics_json = header.value("metrics", json::object()).dump();
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: header: ") + e.what());
  }

  std::map<std::string, Tensor> records;
  std::string name;
  Tensor t;
  while (read_record(in, name, t)) records[name] = std::move(t);

  ck.params = init_encoder_params(ck.config, 0);
  ck.opt.step = ck.step;
  const bool has_opt = header.value("has_optimizer", false);
  for (Parameter* p : ck.params.all()) {
    auto it = records.find(p->name);
    if (it == records.end())
      throw DataError("checkpoint: missing tensor: " + p->name);
    if (!it->second.same_shape(p->value))
      throw ConfigError("checkpoint: tensor shape mismatch: " + p->name);
    p->value = it->second;
    if (has_opt) {
      auto im = records.find("opt.m." + p->name);
      auto iv = records.find("opt.v." + p->name);
      if (im == records.end() || iv == records.end())
        throw DataError("checkpoint: missing optimizer moment for " + p->name);
      ck.opt.m.push_back(im->second);
      ck.opt.v.push_back(iv->second);
    }
  }
  auto mean = records.find("head.bn.running_mean");
  auto var = records.find("head.bn.running_var");
  if (mean == records.end() || var == records.end())
    throw DataError("checkpoint: missing running statistics");
  ck.params.bn_stats.mean = mean->second;
  ck.params.bn_stats.var = var->second;
  return ck;
}

}  // namespace mtse
