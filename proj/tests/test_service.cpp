#include <gtest/gtest.h>

#include <future>
#include <thread>

#include "elisa/service.hpp"
#include "support.hpp"

using namespace elisa;
using namespace elisa::service;

namespace {

dialogue::Models fake_models() {
  return {[](const dialogue::Photo& p) {
            std::vector<std::string> out;
            for (int i = 0; i < 6; ++i) out.push_back("q" + std::to_string(i) + " " + p.id + " " + p.features_path);
            return out;
          },
          [](const std::string& a) { return "ok " + a; }};
}

ServiceConfig config_in(const std::filesystem::path& dir) {
  ServiceConfig c;
  c.listen = "127.0.0.1:0";
  c.photo_dir = dir / "photos";
  c.transcript_dir = dir / "transcripts";
  return c;
}

std::string feat_bytes(std::size_t rows, std::size_t cols) {
  const auto b = serialize_feature_grid(pseudo_encoder("x", rows, cols));
  return std::string(b.begin(), b.end());
}

json cmd(const std::string& c) { return {{"kind", "command"}, {"payload", c}}; }
json text(const std::string& t) { return {{"kind", "user_text"}, {"payload", t}}; }

std::vector<std::string> kinds(const Response& r) {
  std::vector<std::string> out;
  for (const auto& a : r.body.at("actions")) out.push_back(a.at("kind"));
  return out;
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override { dir_ = elisa::testing::temp_dir("svc"); }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

}  // namespace

TEST(ServiceConfig, DefaultsAndEnvOverrides) {
  ServiceConfig c;
  EXPECT_EQ(c.idle_timeout, std::chrono::minutes(30));
  std::map<std::string, std::string> env{{"ELISA_LISTEN", "0.0.0.0:9000"},
                                         {"ELISA_TRANSCRIPT_DIR", "/tmp/t"},
                                         {"ELISA_IDLE_TIMEOUT", "12"}};
  apply_env_overrides(c, [&](const char* k) -> const char* {
    auto it = env.find(k);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  EXPECT_EQ(c.listen, "0.0.0.0:9000");
  EXPECT_EQ(c.transcript_dir, "/tmp/t");
  EXPECT_EQ(c.photo_dir, "photos");
  EXPECT_EQ(c.idle_timeout, std::chrono::seconds(12));
  EXPECT_EQ(split_listen("127.0.0.1:0"), (std::pair<std::string, int>{"127.0.0.1", 0}));
  EXPECT_THROW(split_listen("nohost"), std::invalid_argument);
}

TEST_F(ServiceTest, CreateSessionValidation) {
  ChatService svc(config_in(dir_), fake_models);
  EXPECT_EQ(svc.create_session(json{{"photos", json::array()}}).body.at("code"), "no_photos");
  EXPECT_EQ(svc.create_session(json{{"photos", json::array()}}).status, 400);
  EXPECT_EQ(svc.create_session(json::array()).status, 400);
  EXPECT_EQ(svc.create_session(json{{"photos", {1, 2}}}).status, 400);
  const auto r = svc.create_session(json{{"photos", {"a"}}});
  ASSERT_EQ(r.status, 201);
  const std::string id = r.body.at("session_id");
  EXPECT_TRUE(std::filesystem::exists(svc.transcript_path(id)));
}

TEST_F(ServiceTest, UploadStartShowsUploadedPhoto) {
  ChatService svc(config_in(dir_), fake_models, 5);
  const std::string id = svc.create_session(json{{"photos", {"beach"}}, {"seed", 1}}).body.at("session_id");
  const auto up = svc.upload_photo(id, "beach", feat_bytes(3, 5));
  ASSERT_EQ(up.status, 201) << up.body.dump();
  EXPECT_EQ(up.body.at("photo_id"), "beach");
  const auto start = svc.post_event(id, cmd("/start"));
  ASSERT_EQ(start.status, 200);
  EXPECT_EQ(start.body.at("actions")[0], (json{{"kind", "show_photo"}, {"payload", "beach"}}));
  const auto yes = svc.post_event(id, cmd("/yes"));
  const std::string q = yes.body.at("actions")[0].at("payload");
  EXPECT_NE(q.find("beach.feat"), std::string::npos) << q;
  EXPECT_EQ(yes.body.at("state"), "awaiting_answer");
}

TEST_F(ServiceTest, UploadErrors) {
  ChatService svc(config_in(dir_), fake_models, 5);
  const std::string id = svc.create_session(json{{"photos", {"a"}}}).body.at("session_id");
  EXPECT_EQ(svc.upload_photo("nope", "", feat_bytes(2, 5)).status, 404);
  EXPECT_EQ(svc.upload_photo(id, "", "\x89PNG\r\n\x1a\n...").status, 415);
  EXPECT_EQ(svc.upload_photo(id, "", "FE").status, 415);
  EXPECT_EQ(svc.upload_photo(id, "", feat_bytes(2, 5).substr(0, 20)).status, 400);
  EXPECT_EQ(svc.upload_photo(id, "", feat_bytes(2, 4)).status, 422);
  EXPECT_EQ(svc.upload_photo(id, "../evil", feat_bytes(2, 5)).status, 400);
  const auto ok = svc.upload_photo(id, "", feat_bytes(2, 5));
  EXPECT_EQ(ok.status, 201);
  EXPECT_EQ(ok.body.at("photo_id"), "photo-2");
  svc.post_event(id, cmd("/exit"));
  EXPECT_EQ(svc.upload_photo(id, "", feat_bytes(2, 5)).status, 409);
}

TEST_F(ServiceTest, EventsAndExit) {
  ChatService svc(config_in(dir_), fake_models);
  const std::string id = svc.create_session(json{{"photos", {"a", "b"}}}).body.at("session_id");
  EXPECT_EQ(svc.post_event("missing", cmd("/start")).status, 404);
  EXPECT_EQ(svc.post_event(id, json{{"kind", "add_photo"}, {"payload", "x"}}).status, 400);
  EXPECT_EQ(svc.post_event(id, json{{"kind", "command"}}).status, 400);
  EXPECT_EQ(kinds(svc.post_event(id, cmd("/start"))), (std::vector<std::string>{"show_photo", "info_message"}));
  const auto exit = svc.post_event(id, cmd("/exit"));
  EXPECT_EQ(kinds(exit), (std::vector<std::string>{"end_session"}));
  EXPECT_EQ(exit.body.at("state"), "ended");
  const auto after = svc.post_event(id, text("hello"));
  EXPECT_EQ(after.status, 409);
  EXPECT_EQ(after.body.at("code"), "session_ended");
  EXPECT_TRUE(after.body.contains("message"));
}

TEST_F(ServiceTest, TranscriptMatchesFileAndSurvivesRestart) {
  std::string id;
  json live;
  {
    ChatService svc(config_in(dir_), fake_models);
    id = svc.create_session(json{{"photos", {"a"}}}).body.at("session_id");
    svc.post_event(id, cmd("/start"));
    svc.post_event(id, cmd("/yes"));
    svc.post_event(id, text("my dog"));
    live = svc.get_transcript(id).body;
    const auto bytes = io::read_file(svc.transcript_path(id));
    const auto on_disk =
        dialogue::parse_transcript(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    EXPECT_EQ(json(on_disk), live.at("entries"));
  }
  ChatService restarted(config_in(dir_), fake_models);
  const auto r = restarted.get_transcript(id);
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body, live);
  EXPECT_EQ(restarted.get_transcript("s000000deadbeef").status, 404);
  EXPECT_EQ(restarted.get_transcript("..").status, 404);
}

TEST_F(ServiceTest, TwoSessionsTwoFiles) {
  ChatService svc(config_in(dir_), fake_models);
  const std::string a = svc.create_session(json{{"photos", {"a"}}}).body.at("session_id");
  const std::string b = svc.create_session(json{{"photos", {"a"}}}).body.at("session_id");
  EXPECT_NE(a, b);
  EXPECT_NE(svc.transcript_path(a), svc.transcript_path(b));
  EXPECT_TRUE(std::filesystem::exists(svc.transcript_path(a)));
  EXPECT_TRUE(std::filesystem::exists(svc.transcript_path(b)));
}

TEST_F(ServiceTest, StorageFailureLeavesStateUnchanged) {
  ChatService svc(config_in(dir_), fake_models);
  const std::string id = svc.create_session(json{{"photos", {"a"}}}).body.at("session_id");
  svc.post_event(id, cmd("/start"));
  const auto before = svc.get_transcript(id).body;
  bool fail = true;
  svc.set_transcript_writer([&](const std::filesystem::path& p, const std::string& t) {
    if (fail) throw std::runtime_error("disk full");
    io::write_file_atomic(p, t);
  });
  const auto r = svc.post_event(id, cmd("/yes"));
  EXPECT_EQ(r.status, 503);
  EXPECT_EQ(r.body.at("code"), "storage_unavailable");
  EXPECT_EQ(svc.get_transcript(id).body, before);
  EXPECT_EQ(svc.create_session(json{{"photos", {"a"}}}).status, 503);
  fail = false;
  const auto retry = svc.post_event(id, cmd("/yes"));
  EXPECT_EQ(retry.status, 200);
  EXPECT_EQ(kinds(retry), (std::vector<std::string>{"ask_question"}));
}

TEST_F(ServiceTest, IdleSweepEndsSessions) {
  auto c = config_in(dir_);
  c.idle_timeout = std::chrono::seconds(60);
  ChatService svc(c, fake_models);
  const std::string id = svc.create_session(json{{"photos", {"a"}}}).body.at("session_id");
  EXPECT_EQ(svc.sweep_idle(ChatService::Clock::now()), 0u);
  EXPECT_EQ(svc.sweep_idle(ChatService::Clock::now() + std::chrono::seconds(61)), 1u);
  const auto t = svc.get_transcript(id).body.at("entries");
  EXPECT_EQ(t.back().at("kind"), "end_session");
  EXPECT_EQ(svc.post_event(id, cmd("/start")).status, 409);
  EXPECT_EQ(svc.sweep_idle(ChatService::Clock::now() + std::chrono::hours(2)), 0u);
}

TEST_F(ServiceTest, ConcurrentEventsOnOneSessionAreSerialized) {
  ChatService svc(config_in(dir_), fake_models);
  const std::string id = svc.create_session(json{{"photos", {"a"}}}).body.at("session_id");
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 20; ++i) svc.post_event(id, cmd("/help"));
    });
  }
  for (auto& t : threads) t.join();
  const auto entries = svc.get_transcript(id).body.at("entries");
  ASSERT_EQ(entries.size(), 320u);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ASSERT_EQ(entries[i].at("seq"), i);
    ASSERT_EQ(entries[i].at("role"), i % 2 == 0 ? "user" : "bot");
  }
}

TEST_F(ServiceTest, HttpRoundTrip) {
  ChatService svc(config_in(dir_), fake_models, 5);
  std::promise<int> port;
  std::thread server([&] { svc.run([&](int p) { port.set_value(p); }); });
  const int p = port.get_future().get();
  httplib::Client client("127.0.0.1", p);

  auto created = client.Post("/sessions", R"({"photos": ["a"], "seed": 4})", "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  EXPECT_EQ(created->get_header_value("Access-Control-Allow-Origin"), "*");
  const std::string id = json::parse(created->body).at("session_id");

  auto bad = client.Post("/sessions", "{not json", "application/json");
  EXPECT_EQ(bad->status, 400);

  auto photo = client.Post("/sessions/" + id + "/photos?photo_id=a", feat_bytes(2, 5), "application/octet-stream");
  EXPECT_EQ(photo->status, 201);
  auto png = client.Post("/sessions/" + id + "/photos", "\x89PNG....", "image/png");
  EXPECT_EQ(png->status, 415);

  auto ev = client.Post("/sessions/" + id + "/events", cmd("/start").dump(), "application/json");
  EXPECT_EQ(ev->status, 200);
  EXPECT_EQ(json::parse(ev->body).at("actions")[0].at("kind"), "show_photo");
  auto missing = client.Post("/sessions/zzz/events", cmd("/start").dump(), "application/json");
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body).at("code"), "unknown_session");

  auto tr = client.Get("/sessions/" + id + "/transcript");
  EXPECT_EQ(tr->status, 200);
  EXPECT_EQ(json::parse(tr->body).at("entries").size(), 5u);
  EXPECT_EQ(client.Get("/sessions/zzz/transcript")->status, 404);

  auto pre = client.Options("/sessions");
  EXPECT_EQ(pre->status, 204);
  EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Origin"), "*");

  svc.stop();
  server.join();
}

TEST(NeuralModels, PlansFromPseudoFeaturesWhenNoUpload) {
  Rng rng(1);
  auto vqg = std::make_shared<const VqgModel<float>>(elisa::testing::random_vqg<float>(rng));
  auto bot = std::make_shared<const ChatbotModel<float>>(elisa::testing::random_chatbot<float>(rng));
  const auto models = neural_models(vqg, bot)();
  const auto plan = models.plan_questions({"p", ""});
  EXPECT_LE(plan.size(), vqg->config().beam_width);
  EXPECT_EQ(plan, vqg::generate_questions(pseudo_encoder("p", 196, vqg->config().annotation_dim).to_tensor<float>(), *vqg));
  EXPECT_EQ(models.feedback("hello"), chatbot::reply_to("hello", *bot));
}
