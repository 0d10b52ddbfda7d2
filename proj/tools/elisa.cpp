#include <pthread.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "elisa/bleu.hpp"
#include "elisa/checkpoint.hpp"
#include "elisa/service.hpp"
#include "elisa/training.hpp"

using namespace elisa;

namespace {

using Real = float;

struct TrainOptions {
  std::filesystem::path data;
  std::filesystem::path out;
  std::size_t min_count = 1;
  std::size_t steps = 1000;
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  double until_loss = 0.0;  // 0: run all steps
  std::size_t check_every = 100;
  std::size_t log_every = 50;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--data", data, "Training data (JSON lines)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "Checkpoint to write")->required();
    cmd->add_option("--min-count", min_count, "Minimum token count for the vocabulary")->capture_default_str();
    cmd->add_option("--steps", steps, "Maximum optimizer steps")->capture_default_str();
    cmd->add_option("--batch-size", batch_size, "Minibatch size")->capture_default_str();
    cmd->add_option("--lr", learning_rate, "Adam learning rate")->capture_default_str();
    cmd->add_option("--clip", clip_norm, "Global gradient norm bound")->capture_default_str();
    cmd->add_option("--seed", seed, "Initialization and shuffling seed")->capture_default_str();
    cmd->add_option("--until-loss", until_loss, "Stop once the mean corpus loss falls below this value");
    cmd->add_option("--check-every", check_every, "Steps between --until-loss checks")->capture_default_str();
    cmd->add_option("--log-every", log_every, "Steps between progress lines")->capture_default_str();
  }

  TrainConfig config() const {
    TrainConfig c;
    c.batch_size = batch_size;
    c.learning_rate = learning_rate;
    c.clip_norm = clip_norm;
    c.seed = seed;
    return c;
  }
};

struct Progress {
  std::size_t steps = 0;
  double loss = 0.0;
};

// Trains in chunks so --until-loss can stop early; Adam state carries over.
template <typename Model, typename Data, typename Step>
Progress run_training(Model& model, const Data& data, const TrainOptions& o, Step step) {
  AdamState<Real> adam;
  Progress p;
  const std::size_t chunk = o.until_loss > 0.0 ? std::max<std::size_t>(1, o.check_every) : o.steps;
  while (p.steps < o.steps) {
    TrainConfig c = o.config();
    c.max_steps = std::min(chunk, o.steps - p.steps);
    c.seed = o.seed + p.steps;
    const std::size_t base = p.steps;
    const auto r = step(model, data, c, &adam, [&](std::size_t s, double loss) {
      const std::size_t global = base + s + 1;
      if (o.log_every > 0 && global % o.log_every == 0) std::cerr << "step " << global << " loss " << loss << "\n";
    });
    p.steps += r.steps;
    if (r.steps == 0) break;
    if (o.until_loss > 0.0 && mean_loss<Real>(model, std::span(data)) < o.until_loss) break;
  }
  p.loss = mean_loss<Real>(model, std::span(data));
  return p;
}

int train_vqg_command(const TrainOptions& o, VqgConfig vc) {
  const auto records = load_question_dataset(o.data);
  if (records.empty()) throw std::invalid_argument("dataset " + o.data.string() + " has no records");
  const auto base = o.data.parent_path();
  vc.annotation_dim = load_feature_grid(base / records.front().features).cols;
  VqgModel<Real> model(vc, build_vocabulary(question_corpus(records), o.min_count), o.seed);
  const auto examples = make_vqg_examples(records, base, model);
  const auto p = run_training(model, examples, o, [](auto& m, const auto& d, const TrainConfig& c, auto* adam, auto cb) {
    return train_vqg<Real>(m, d, c, adam, cb);
  });
  save_checkpoint(to_checkpoint(model), o.out);
  std::cout << "saved vqg checkpoint " << o.out.string() << " (vocab " << model.vocab_size() << ", steps " << p.steps
            << ", mean loss " << p.loss << ")\n";
  return 0;
}

int train_chatbot_command(const TrainOptions& o, const ChatbotConfig& cc, const std::filesystem::path& fine_tune_from) {
  const auto pairs = load_dialogue_pairs(o.data);
  if (pairs.empty()) throw std::invalid_argument("dataset " + o.data.string() + " has no records");
  ChatbotModel<Real> model = fine_tune_from.empty()
                                 ? ChatbotModel<Real>(cc, build_vocabulary(dialogue_corpus(pairs), o.min_count), o.seed)
                                 : chatbot_from_checkpoint<Real>(load_checkpoint(fine_tune_from, ModelKind::chatbot));
  const auto encoded = encode_pairs(pairs, model);
  const double before = mean_loss<Real>(model, std::span<const EncodedPair>(encoded));
  const auto p = run_training(model, encoded, o, [](auto& m, const auto& d, const TrainConfig& c, auto* adam, auto cb) {
    return train_chatbot<Real>(m, d, c, adam, cb);
  });
  save_checkpoint(to_checkpoint(model), o.out);
  std::cout << "saved chatbot checkpoint " << o.out.string() << " (vocab " << model.vocab_size() << ", steps " << p.steps
            << ", mean loss " << before << " -> " << p.loss << ")\n";
  return 0;
}

int gen_questions_command(const std::filesystem::path& checkpoint, const std::filesystem::path& features,
                          const std::string& image_id, std::size_t rows, std::size_t beam_width, std::size_t outputs) {
  const auto model = vqg_from_checkpoint<Real>(load_checkpoint(checkpoint, ModelKind::vqg));
  const FeatureGrid grid =
      features.empty() ? pseudo_encoder(image_id, rows, model.config().annotation_dim) : load_feature_grid(features);
  if (grid.cols != model.config().annotation_dim) {
    throw std::invalid_argument("feature dimension " + std::to_string(grid.cols) + ", model expects " +
                                std::to_string(model.config().annotation_dim));
  }
  const std::size_t width = beam_width ? beam_width : model.config().beam_width;
  const std::size_t count = outputs ? outputs : std::min(width, model.config().outputs_per_image);
  const auto ranked = vqg::beam_search(grid.to_tensor<Real>(), model, width, count);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    std::cout << i + 1 << "\t" << ranked[i].score << "\t" << ranked[i].text << "\n";
  }
  return 0;
}

int eval_bleu_command(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                      const std::filesystem::path& candidates_file) {
  const auto records = load_question_dataset(data);
  std::vector<std::string> candidates;
  if (!candidates_file.empty()) {
    std::ifstream in(candidates_file);
    if (!in) throw std::runtime_error("cannot open " + candidates_file.string());
    for (std::string line; std::getline(in, line);) candidates.push_back(line);
  } else {
    const auto model = vqg_from_checkpoint<Real>(load_checkpoint(checkpoint, ModelKind::vqg));
    for (const auto& r : records) {
      const auto grid = load_feature_grid(data.parent_path() / r.features);
      const auto ranked = vqg::beam_search(grid.to_tensor<Real>(), model, model.config().beam_width, 1);
      candidates.push_back(ranked.empty() ? "" : ranked.front().text);
    }
  }
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : records) refs.push_back(r.questions);
  std::cout << nlohmann::json(corpus_bleu(candidates, refs)).dump(2) << "\n";
  return 0;
}

std::vector<dialogue::Photo> parse_photos(const std::vector<std::string>& specs) {
  std::vector<dialogue::Photo> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      out.push_back({s, ""});
    } else {
      out.push_back({s.substr(0, eq), s.substr(eq + 1)});
    }
  }
  return out;
}

int chat_command(const std::filesystem::path& vqg_path, const std::filesystem::path& bot_path,
                 const std::vector<std::string>& photo_specs, std::uint64_t seed) {
  auto vqg = std::make_shared<const VqgModel<Real>>(
      vqg_from_checkpoint<Real>(load_checkpoint(vqg_path, ModelKind::vqg)));
  auto bot = std::make_shared<const ChatbotModel<Real>>(
      chatbot_from_checkpoint<Real>(load_checkpoint(bot_path, ModelKind::chatbot)));
  dialogue::Session session("local", parse_photos(photo_specs), seed, service::neural_models(vqg, bot)());
  std::cout << "Type /start to begin; /yes, /change and /exit are the other commands.\n";
  for (std::string line; !session.ended() && std::getline(std::cin, line);) {
    if (line.empty()) continue;
    const auto ev = line.front() == '/' ? dialogue::Event::command(line) : dialogue::Event::text(line);
    for (const auto& a : session.handle_event(ev)) {
      std::cout << "[" << dialogue::to_string(a.kind) << "] " << a.payload << "\n";
    }
  }
  return 0;
}

std::atomic<bool> serve_done{false};

int serve_command(service::ServiceConfig config) {
  if (config.vqg_checkpoint.empty() || config.chatbot_checkpoint.empty()) {
    throw std::invalid_argument("serve needs --vqg-checkpoint and --chatbot-checkpoint");
  }
  auto vqg = std::make_shared<const VqgModel<Real>>(
      vqg_from_checkpoint<Real>(load_checkpoint(config.vqg_checkpoint, ModelKind::vqg)));
  auto bot = std::make_shared<const ChatbotModel<Real>>(
      chatbot_from_checkpoint<Real>(load_checkpoint(config.chatbot_checkpoint, ModelKind::chatbot)));

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  const std::string host = service::split_listen(config.listen).first;
  service::ChatService svc(config, service::neural_models(vqg, bot), vqg->config().annotation_dim);
  std::thread([&svc, signals] {
    int sig = 0;
    sigwait(&signals, &sig);
    // stop() before the listen loop starts is lost, so repeat until it ends.
    while (!serve_done) {
      svc.stop();
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  }).detach();

  const bool ok = svc.run([&](int port) { std::cout << "listening on " << host << ":" << port << std::endl; });
  serve_done = true;
  if (!ok) {
    std::cerr << "error: cannot listen on " << config.listen << "\n";
    return 1;
  }
  return 0;
}

int make_features_command(const std::string& image_id, std::size_t rows, std::size_t cols,
                          const std::filesystem::path& out) {
  save_feature_grid(pseudo_encoder(image_id, rows, cols), out);
  std::cout << "wrote " << rows << "x" << cols << " feature grid " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Photo reminiscence dialogue engine: training, evaluation and chat service"};
  app.require_subcommand(1);

  TrainOptions vqg_train;
  VqgConfig vqg_config;
  auto* train_vqg_cmd = app.add_subcommand("train-vqg", "Train the question generator");
  vqg_train.add_flags(train_vqg_cmd);
  train_vqg_cmd->add_option("--attention-dim", vqg_config.attention_dim)->capture_default_str();
  train_vqg_cmd->add_option("--embedding-dim", vqg_config.embedding_dim)->capture_default_str();
  train_vqg_cmd->add_option("--lstm-dim", vqg_config.lstm_dim)->capture_default_str();
  train_vqg_cmd->add_option("--dropout", vqg_config.dropout)->capture_default_str();
  train_vqg_cmd->add_option("--beam-width", vqg_config.beam_width)->capture_default_str();
  train_vqg_cmd->add_option("--outputs", vqg_config.outputs_per_image, "Questions kept per image")
      ->capture_default_str();

  TrainOptions bot_train;
  ChatbotConfig bot_config;
  std::filesystem::path fine_tune_from;
  auto* train_bot_cmd = app.add_subcommand("train-chatbot", "Train or fine-tune the feedback chatbot");
  bot_train.add_flags(train_bot_cmd);
  train_bot_cmd->add_option("--hidden-dim", bot_config.hidden_dim)->capture_default_str();
  train_bot_cmd->add_option("--embedding-dim", bot_config.embedding_dim)->capture_default_str();
  train_bot_cmd->add_option("--dropout", bot_config.dropout)->capture_default_str();
  train_bot_cmd->add_option("--fine-tune", fine_tune_from, "Continue from this chatbot checkpoint (vocabulary frozen)")
      ->check(CLI::ExistingFile);

  std::filesystem::path gen_ckpt, gen_features;
  std::string gen_image;
  std::size_t gen_rows = 196, gen_beam = 0, gen_outputs = 0;
  auto* gen_cmd = app.add_subcommand("gen-questions", "Rank questions for one photo");
  gen_cmd->add_option("--checkpoint", gen_ckpt)->required()->check(CLI::ExistingFile);
  auto* feat_opt = gen_cmd->add_option("--features", gen_features, "FEAT file")->check(CLI::ExistingFile);
  auto* image_opt = gen_cmd->add_option("--image-id", gen_image, "Use pseudo-encoder features for this id");
  feat_opt->excludes(image_opt);
  gen_cmd->add_option("--rows", gen_rows, "Pseudo-encoder rows")->capture_default_str();
  gen_cmd->add_option("--beam-width", gen_beam, "Override the checkpoint's beam width");
  gen_cmd->add_option("--outputs", gen_outputs, "Number of questions to print");

  std::filesystem::path bleu_ckpt, bleu_data, bleu_candidates;
  auto* bleu_cmd = app.add_subcommand("eval-bleu", "BLEU-4 of generated questions against the references");
  auto* bleu_ckpt_opt = bleu_cmd->add_option("--checkpoint", bleu_ckpt)->check(CLI::ExistingFile);
  bleu_cmd->add_option("--data", bleu_data, "Question dataset")->required()->check(CLI::ExistingFile);
  auto* cand_opt = bleu_cmd->add_option("--candidates", bleu_candidates, "One candidate per line instead of a model")
                       ->check(CLI::ExistingFile);
  bleu_ckpt_opt->excludes(cand_opt);

  std::filesystem::path chat_vqg, chat_bot;
  std::vector<std::string> chat_photos;
  std::uint64_t chat_seed = 0;
  auto* chat_cmd = app.add_subcommand("chat", "Local terminal session");
  chat_cmd->add_option("--vqg-checkpoint", chat_vqg)->required()->check(CLI::ExistingFile);
  chat_cmd->add_option("--chatbot-checkpoint", chat_bot)->required()->check(CLI::ExistingFile);
  chat_cmd->add_option("--photo", chat_photos, "Photo id, or id=features.feat")->required();
  chat_cmd->add_option("--seed", chat_seed)->capture_default_str();

  // Defaults, then environment, then flags.
  service::ServiceConfig serve_config;
  service::apply_env_overrides(serve_config);
  std::int64_t idle_seconds = serve_config.idle_timeout.count();
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP chat service");
  serve_cmd->add_option("--listen", serve_config.listen, "host:port (port 0 picks a free port)")->capture_default_str();
  serve_cmd->add_option("--vqg-checkpoint", serve_config.vqg_checkpoint);
  serve_cmd->add_option("--chatbot-checkpoint", serve_config.chatbot_checkpoint);
  serve_cmd->add_option("--photo-dir", serve_config.photo_dir)->capture_default_str();
  serve_cmd->add_option("--transcript-dir", serve_config.transcript_dir)->capture_default_str();
  serve_cmd->add_option("--idle-timeout", idle_seconds, "Seconds before an idle session ends")->capture_default_str();

  std::string mf_image;
  std::size_t mf_rows = 196, mf_cols = 0;
  std::filesystem::path mf_out;
  auto* mf_cmd = app.add_subcommand("make-features", "Write a pseudo-encoder feature grid");
  mf_cmd->add_option("--image-id", mf_image)->required();
  mf_cmd->add_option("--rows", mf_rows)->capture_default_str();
  mf_cmd->add_option("--cols", mf_cols)->required();
  mf_cmd->add_option("--out", mf_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_vqg_cmd) return train_vqg_command(vqg_train, vqg_config);
    if (*train_bot_cmd) return train_chatbot_command(bot_train, bot_config, fine_tune_from);
    if (*gen_cmd) {
      if (gen_features.empty() && gen_image.empty()) throw CLI::RequiredError("--features or --image-id");
      return gen_questions_command(gen_ckpt, gen_features, gen_image, gen_rows, gen_beam, gen_outputs);
    }
    if (*bleu_cmd) {
      if (bleu_ckpt.empty() && bleu_candidates.empty()) throw CLI::RequiredError("--checkpoint or --candidates");
      return eval_bleu_command(bleu_ckpt, bleu_data, bleu_candidates);
    }
    if (*chat_cmd) return chat_command(chat_vqg, chat_bot, chat_photos, chat_seed);
    if (*serve_cmd) {
      serve_config.idle_timeout = std::chrono::seconds(idle_seconds);
      return serve_command(serve_config);
    }
    if (*mf_cmd) return make_features_command(mf_image, mf_rows, mf_cols, mf_out);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
