#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "buddynet/ablation.hpp"
#include "buddynet/checkpoint.hpp"
#include "buddynet/config.hpp"
#include "buddynet/dataset.hpp"
#include "buddynet/errors.hpp"
#include "buddynet/evaluation.hpp"
#include "buddynet/postproc.hpp"
#include "buddynet/retrieval.hpp"
#include "buddynet/trainer.hpp"

namespace fs = std::filesystem;
using namespace buddynet;

namespace {

// Options shared by every subcommand.
struct Common {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::optional<std::size_t> epochs;
  std::optional<double> lambda;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "key = value settings file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed for every random draw");
  cmd->add_option("--set", c.overrides, "key=value override, repeatable");
  cmd->add_option("--epochs", c.epochs, "training epochs");
  cmd->add_option("--lambda", c.lambda, "weight transfer coefficient");
}

// Defaults, then the file, then --set, then the dedicated flags.
Settings resolve(const Common& c) {
  Settings s;
  if (!c.config_file.empty()) apply_config(read_config(c.config_file), s);
  ConfigMap extra;
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    std::string text = kv.substr(0, eq) + " = " + kv.substr(eq + 1) + "\n";
    for (const auto& [k, v] : parse_config(text, "--set")) {
      if (extra.count(k) != 0) throw ValidationError("--set given twice for '" + k + "'");
      extra[k] = v;
    }
  }
  apply_config(extra, s);
  if (c.seed) {
    s.training.seed = *c.seed;
    s.retrieval.crop_seed = *c.seed;
  }
  if (c.epochs) s.training.epochs = *c.epochs;
  if (c.lambda) s.training.lambda = *c.lambda;
  s.training.validate();
  s.diffusion.validate();
  return s;
}

std::size_t num_classes_of(const std::vector<LabeledImage>& images) {
  std::size_t n = 0;
  for (const LabeledImage& im : images) n = std::max(n, im.label + 1);
  return n;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Dataset load_dataset_dir(const fs::path& dir) {
  Dataset d;
  d.train = load_manifest_images(dir / "train.tsv");
  d.database = load_manifest_images(dir / "database.tsv");
  d.queries = load_manifest_images(dir / "queries.tsv");
  d.ground_truth = read_ground_truth(dir / "gt.txt");
  d.num_classes = num_classes_of(d.train);
  return d;
}

// Similarity function over `index`, holding the diffusion table it may need.
struct Pipeline {
  std::unique_ptr<DiffusionTable> table;
  SimilarityFunc sim;
};

Pipeline make_pipeline(PostProcessing pp, const RetrievalIndex& index, const DiffusionConfig& cfg,
                       const std::string& table_path) {
  Pipeline p;
  if (pp == PostProcessing::kOfflineDiffusion) {
    const Eigen::MatrixXd s = pairwise_similarities(index);
    p.table = std::make_unique<DiffusionTable>(
        table_path.empty()
            ? offline_diffusion_prepare(s, cfg)
            : read_diffusion_table(table_path, symmetric_normalize(mutual_knn_affinity(s, cfg.graph_k)), cfg.alpha));
  }
  p.sim = compose(pp, index, cfg, p.table.get());
  return p;
}

struct SynthArgs {
  std::string out;
  SyntheticSpec spec;
};

void run_synth(const SynthArgs& a, const Common& c) {
  SyntheticSpec spec = a.spec;
  if (c.seed) spec.seed = *c.seed;
  spec.validate();
  const Dataset d = synth_dataset(spec);
  write_dataset(a.out, d);
  std::cout << "wrote " << d.train.size() << " train, " << d.database.size() << " database, " << d.queries.size()
            << " query images to " << a.out << "\n";
}

struct TrainArgs {
  std::string manifest;
  std::string out;
};

void run_train(const TrainArgs& a, const Common& c) {
  Settings s = resolve(c);
  const std::vector<LabeledImage> images = load_manifest_images(a.manifest);
  if (images.empty()) throw ValidationError("training manifest '" + a.manifest + "' lists no images");
  const fs::path out(a.out);
  fs::create_directories(out);
  const TrainState state = train(s.training, images, num_classes_of(images));
  write_checkpoint(out / "master.bnet", state.master, state.normalization);
  write_checkpoint(out / "assistant.bnet", state.assistant, state.normalization);
  write_text(out / "metrics.tsv", format_metrics(state.log, false));
  write_text(out / "settings.cfg", print_config(to_config(s)));
  for (const EpochMetrics& m : state.log) {
    std::cerr << "epoch " << m.epoch << " total " << format_real(m.loss.total) << " (" << m.wall_ms << " ms)\n";
  }
}

struct EmbedArgs {
  std::string checkpoint;
  std::string assistant;
  std::string manifest;
  std::string out;
};

void run_embed(const EmbedArgs& a, const Common& c) {
  const Settings s = resolve(c);
  const Checkpoint master = read_checkpoint(a.checkpoint);
  if (master.params.config.image_side != s.training.crops.global_side) {
    throw ValidationError("checkpoint was trained on " + std::to_string(master.params.config.image_side) +
                          "-pixel crops but global_side is " + std::to_string(s.training.crops.global_side));
  }
  std::optional<Checkpoint> assistant;
  if (!a.assistant.empty()) assistant = read_checkpoint(a.assistant);
  const std::vector<LabeledImage> images = load_manifest_images(a.manifest);
  const std::vector<EmbeddingRecord> records =
      embed_images(images, master.params, master.normalization, s.training.crops, s.retrieval,
                   assistant ? &assistant->params : nullptr);
  write_embeddings(a.out, records);
  std::cout << "embedded " << records.size() << " images, dim " << (records.empty() ? 0 : records[0].vector.size())
            << "\n";
}

struct IndexArgs {
  std::string db;
  std::string out;
};

void run_index(const IndexArgs& a, const Common& c) {
  const Settings s = resolve(c);
  const RetrievalIndex index = build_index(read_embeddings(a.db));
  if (index.empty()) throw ValidationError("database '" + a.db + "' is empty");
  const DiffusionTable t = offline_diffusion_prepare(pairwise_similarities(index), s.diffusion);
  write_diffusion_table(a.out, t.table);
  std::cout << "n " << index.size() << " alpha " << format_real(t.alpha) << " graph_k " << s.diffusion.graph_k
            << " residual " << t.residual() << "\n";
}

struct QueryArgs {
  std::string db;
  std::string queries;
  std::size_t k = 10;
  std::string pp = "none";
  std::string diffusion;
};

void run_query(const QueryArgs& a, const Common& c) {
  const Settings s = resolve(c);
  const RetrievalIndex index = build_index(read_embeddings(a.db));
  const std::vector<EmbeddingRecord> queries = read_embeddings(a.queries);
  const Pipeline p = make_pipeline(parse_postprocessing(a.pp), index, s.diffusion, a.diffusion);
  for (const EmbeddingRecord& q : queries) {
    const RankedList ranked = p.sim(q.vector);
    const std::size_t n = std::min(a.k, ranked.size());
    for (std::size_t r = 0; r < n; ++r) {
      std::cout << q.id << '\t' << r + 1 << '\t' << ranked.entries[r].id << '\t'
                << format_real(ranked.entries[r].score) << '\n';
    }
  }
}

struct EvalArgs {
  std::string db;
  std::string queries;
  std::string gt;
  std::string pp = "none";
  std::string diffusion;
  std::string format = "tsv";
};

void run_eval(const EvalArgs& a, const Common& c) {
  const Settings s = resolve(c);
  const RetrievalIndex index = build_index(read_embeddings(a.db));
  const std::vector<EmbeddingRecord> queries = read_embeddings(a.queries);
  const GroundTruth gt = read_ground_truth(a.gt);
  const PostProcessing pp = parse_postprocessing(a.pp);
  const Pipeline p = make_pipeline(pp, index, s.diffusion, a.diffusion);
  EvalReport report = evaluate(queries, gt, p.sim, postprocessing_name(pp));
  if (pp != PostProcessing::kNone) {
    const ConfigMap all = to_config(s);
    for (const char* key : {"alpha", "graph_k", "truncation_n", "heat_t", "aqe_top_k", "rerank_depth", "heat_laplacian"}) {
      report.config[key] = all.at(key);
    }
  }
  std::cout << (a.format == "json" ? report.to_json() : report.to_tsv());
}

struct AblateArgs {
  std::string grid = "lambda";
  double from = 0.30;
  double to = 0.95;
  double step = 0.05;
  std::string data;
  std::string pp = "none";
  std::string out;
};

void run_ablate(const AblateArgs& a, const Common& c) {
  const Settings s = resolve(c);
  const std::vector<TrainingConfig> cells =
      a.grid == "lambda" ? lambda_grid(s.training, a.from, a.to, a.step) : combination_grid(s.training);
  Dataset data;
  if (a.data.empty()) {
    SyntheticSpec spec;
    spec.seed = s.training.seed;
    data = synth_dataset(spec);
  } else {
    data = load_dataset_dir(a.data);
  }
  EvaluationSetup setup;
  setup.retrieval = s.retrieval;
  setup.postprocessing = parse_postprocessing(a.pp);
  setup.diffusion = s.diffusion;
  setup.concat_assistant = s.concat_assistant;
  const std::string table = format_ablation(ablate(cells, data, setup));
  if (!a.out.empty()) write_text(a.out, table);
  std::cout << table;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Master/assistant retrieval training and evaluation"};
  app.require_subcommand(1);
  Common common;

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "write a synthetic texture dataset");
  add_common(synth_cmd, common);
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--classes", synth.spec.n_classes);
  synth_cmd->add_option("--per-class", synth.spec.images_per_class);
  synth_cmd->add_option("--side", synth.spec.image_side);
  synth_cmd->add_option("--channels", synth.spec.channels);
  synth_cmd->add_option("--noise", synth.spec.noise_sigma);
  synth_cmd->add_option("--train-per-class", synth.spec.train_per_class);
  synth_cmd->add_option("--query-per-class", synth.spec.query_per_class);

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train master and assistant blocks");
  add_common(train_cmd, common);
  train_cmd->add_option("--train", train_args.manifest, "training manifest")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_args.out, "run directory")->required();

  EmbedArgs embed;
  CLI::App* embed_cmd = app.add_subcommand("embed", "embed the images of a manifest");
  add_common(embed_cmd, common);
  embed_cmd->add_option("--checkpoint", embed.checkpoint, "master checkpoint")->required()->check(CLI::ExistingFile);
  embed_cmd->add_option("--assistant", embed.assistant, "append this block's embeddings")->check(CLI::ExistingFile);
  embed_cmd->add_option("--manifest", embed.manifest)->required()->check(CLI::ExistingFile);
  embed_cmd->add_option("--out", embed.out, "embedding file")->required();

  IndexArgs index;
  CLI::App* index_cmd = app.add_subcommand("index", "precompute the offline diffusion table");
  add_common(index_cmd, common);
  index_cmd->add_option("--db", index.db)->required()->check(CLI::ExistingFile);
  index_cmd->add_option("--out", index.out)->required();

  const std::vector<std::string> pipelines{"none", "Q", "WQR", "O"};

  QueryArgs query;
  CLI::App* query_cmd = app.add_subcommand("query", "print the top-k matches of each query");
  add_common(query_cmd, common);
  query_cmd->add_option("--db", query.db)->required()->check(CLI::ExistingFile);
  query_cmd->add_option("--queries", query.queries)->required()->check(CLI::ExistingFile);
  query_cmd->add_option("--k", query.k);
  query_cmd->add_option("--pp", query.pp)->check(CLI::IsMember(pipelines));
  query_cmd->add_option("--diffusion", query.diffusion, "table written by index")->check(CLI::ExistingFile);

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "mean average precision of queries against a database");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--db", eval.db)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--queries", eval.queries)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--gt", eval.gt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--pp", eval.pp)->check(CLI::IsMember(pipelines));
  eval_cmd->add_option("--diffusion", eval.diffusion)->check(CLI::ExistingFile);
  eval_cmd->add_option("--format", eval.format)->check(CLI::IsMember({"tsv", "json"}));

  AblateArgs ablate_args;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train and score a grid of configurations");
  add_common(ablate_cmd, common);
  ablate_cmd->add_option("--grid", ablate_args.grid)->check(CLI::IsMember({"lambda", "combinations"}));
  ablate_cmd->add_option("--from", ablate_args.from);
  ablate_cmd->add_option("--to", ablate_args.to);
  ablate_cmd->add_option("--step", ablate_args.step);
  ablate_cmd->add_option("--data", ablate_args.data, "directory written by synth")->check(CLI::ExistingDirectory);
  ablate_cmd->add_option("--pp", ablate_args.pp)->check(CLI::IsMember(pipelines));
  ablate_cmd->add_option("--out", ablate_args.out, "also write the table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*synth_cmd) run_synth(synth, common);
    if (*train_cmd) run_train(train_args, common);
    if (*embed_cmd) run_embed(embed, common);
    if (*index_cmd) run_index(index, common);
    if (*query_cmd) run_query(query, common);
    if (*eval_cmd) run_eval(eval, common);
    if (*ablate_cmd) run_ablate(ablate_args, common);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
