#include "psdn/checkpoint.hpp"

#include "psdn/errors.hpp"
#include "psdn/json_util.hpp"
#include "psdn/tensor_io.hpp"

namespace psdn {
namespace {

void write_params(const std::filesystem::path& dir,
                  const ad::ParamStore<float>& store) {
  std::filesystem::create_directories(dir);
  for (const auto& p : store.all())
    write_tensor(dir / (p->name + ".psdn"), p->value);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir,
                     const ad::ParamStore<float>& store,
                     const TrainConfig& config, int step,
                     const Adam<float>* optimizer) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint dir: " + dir.string());

  save_json_file(dir / "config.json", config.to_json());

  nlohmann::ordered_json index;
  index["format"] = 1;
  index["step"] = step;
  index["variant"] = variant_name(config.variant);
  auto params = nlohmann::ordered_json::array();
  for (const auto& p : store.all()) {
    nlohmann::ordered_json e;
    e["name"] = p->name;
    e["file"] = "params/" + p->name + ".psdn";
    e["shape"] = {p->value.rows(), p->value.cols()};
    e["trainable"] = p->trainable;
    params.push_back(e);
  }
  index["params"] = params;
  save_json_file(dir / "index.json", index);

  write_params(dir / "params", store);

  if (optimizer != nullptr) {
    std::filesystem::create_directories(dir / "optimizer" / "m");
    std::filesystem::create_directories(dir / "optimizer" / "v");
    nlohmann::ordered_json state;
    state["step"] = optimizer->step_count();
    save_json_file(dir / "optimizer" / "state.json", state);
    for (const auto& p : store.all()) {
      if (!p->trainable) continue;
      write_tensor(dir / "optimizer" / "m" / (p->name + ".psdn"),
                   optimizer->moment1(p->index));
      write_tensor(dir / "optimizer" / "v" / (p->name + ".psdn"),
                   optimizer->moment2(p->index));
    }
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint out;
  out.config = TrainConfig::from_json(load_json_file(dir / "config.json"));
  auto index = load_json_file(dir / "index.json");
  if (!index.contains("step") || !index.contains("params"))
    throw DataError("checkpoint index.json is missing fields: " + dir.string());
  out.step = index["step"].get<int>();

  out.model = PsdnModel<float>::build(out.config.dims, out.config.variant,
                                      out.config.seed);
  std::size_t loaded = 0;
  for (const auto& e : index["params"]) {
    const std::string name = e.at("name").get<std::string>();
    ad::Parameter<float>* p = out.model->store().find(name);
    if (p == nullptr)
      throw DataError("checkpoint has unknown parameter '" + name + "'");
    MatF v = read_matrix(dir / "params" / (name + ".psdn"));
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
      throw DataError("checkpoint parameter '" + name + "' has wrong shape");
    p->value = std::move(v);
    ++loaded;
  }
  if (loaded != out.model->store().all().size())
    throw DataError("checkpoint is missing parameters (" +
                    std::to_string(loaded) + " of " +
                    std::to_string(out.model->store().all().size()) + ")");
  return out;
}

void load_optimizer(const std::filesystem::path& dir, Adam<float>& optimizer,
                    const ad::ParamStore<float>& store) {
  auto state = load_json_file(dir / "optimizer" / "state.json");
  std::vector<MatF> m(store.all().size()), v(store.all().size());
  for (const auto& p : store.all()) {
    if (p->trainable) {
      m[p->index] = read_matrix(dir / "optimizer" / "m" / (p->name + ".psdn"));
      v[p->index] = read_matrix(dir / "optimizer" / "v" / (p->name + ".psdn"));
    } else {
      m[p->index] = MatF::Zero(p->value.rows(), p->value.cols());
      v[p->index] = MatF::Zero(p->value.rows(), p->value.cols());
    }
  }
  optimizer.restore(state.at("step").get<std::int64_t>(), std::move(m),
                    std::move(v));
}

}  // namespace psdn
