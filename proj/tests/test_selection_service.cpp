#include <unistd.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "lesionforge/pipeline/artifacts.hpp"
#include "lesionforge/pipeline/image_io.hpp"
#include "lesionforge/pipeline/selection_service.hpp"

using namespace lf;
using namespace lf::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("lf_serve_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 12x8 image: cluster 0 is the left third, 1 the middle, 2 the right third.
// Clusters 1 and 2 are offered as candidates.
SessionImage make_image(const std::string& id, std::uint8_t shade) {
  SessionImage img;
  img.id = id;
  img.image = RgbImage(12, 8, shade);
  img.labels = LabelMap(12, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 12; ++x) img.labels.at(x, y) = static_cast<int>(x / 4);
  img.candidates.push_back({1, 32, {5.5, 3.5}, {6, 4}});
  img.candidates.push_back({2, 32, {9.5, 3.5}, {10, 4}});
  return img;
}

std::vector<SessionImage> three_images() {
  return {make_image("img_a", 40), make_image("img_b", 90), make_image("img_c", 200)};
}

struct Fixture {
  TempDir dir;
  fs::path journal = dir.path / "serve" / "journal.jsonl";
  fs::path output = dir.path / "serve" / "selections.json";
  std::unique_ptr<SelectionSession> session;
  std::unique_ptr<SelectionServer> server;
  int port = 0;

  Fixture() { open(); }
  void open() {
    server.reset();
    session = std::make_unique<SelectionSession>("run1", three_images(), journal, output);
    server = std::make_unique<SelectionServer>(*session);
    port = server->bind("127.0.0.1", 0);
    server->start();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

httplib::Result post_json(httplib::Client& c, const std::string& path, const json& body) {
  return c.Post(path.c_str(), body.dump(), "application/json");
}

json body_of(const httplib::Result& r) { return json::parse(r->body); }

}  // namespace

TEST_SUITE("selection service") {
  TEST_CASE("image list and candidates") {
    Fixture f;
    auto c = f.client();
    auto r = c.Get("/api/images");
    REQUIRE(r);
    CHECK(r->status == 200);
    const json list = body_of(r);
    CHECK(list.at("run_id") == "run1");
    REQUIRE(list.at("images").size() == 3);
    CHECK(list["images"][0].at("id") == "img_a");
    CHECK(list["images"][0].at("candidate_count") == 2);
    CHECK(list["images"][0].at("selected") == false);

    r = c.Get("/api/images/img_b/candidates");
    REQUIRE(r);
    CHECK(r->status == 200);
    const json cand = body_of(r);
    CHECK(cand.at("width") == 12);
    CHECK(cand.at("height") == 8);
    CHECK(cand.at("total_pixels") == 96);
    REQUIRE(cand.at("candidates").size() == 2);
    CHECK(cand["candidates"][0].at("cluster_id") == 1);
    CHECK(cand["candidates"][0].at("overlay_url") == "/api/images/img_b/overlay/1.png");

    r = c.Get("/api/images/nope/candidates");
    REQUIRE(r);
    CHECK(r->status == 404);
  }

  TEST_CASE("base and overlay PNGs decode to the expected pixels") {
    Fixture f;
    auto c = f.client();
    auto r = c.Get("/api/images/img_b/image.png");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->get_header_value("Content-Type") == "image/png");
    const fs::path p = f.dir.path / "base.png";
    std::ofstream(p, std::ios::binary) << r->body;
    const auto base = io::load_rgb(p).image;
    CHECK(base.width == 12);
    CHECK(base.at(0, 0, 0) == 90);

    r = c.Get("/api/images/img_b/overlay/2.png");
    REQUIRE(r);
    CHECK(r->status == 200);
    const fs::path q = f.dir.path / "overlay.png";
    std::ofstream(q, std::ios::binary) << r->body;
    const auto ov = io::load_rgb(q).image;
    // Red at alpha 0.5 over gray 90 inside cluster 2 only.
    CHECK(ov.at(0, 0, 0) == 90);
    CHECK(std::abs(int(ov.at(10, 3, 0)) - 173) <= 1);
    CHECK(std::abs(int(ov.at(10, 3, 1)) - 45) <= 1);

    r = c.Get("/api/images/img_b/overlay/0.png");
    REQUIRE(r);
    CHECK(r->status == 404);
    r = c.Get("/api/images/zzz/image.png");
    REQUIRE(r);
    CHECK(r->status == 404);
  }

  TEST_CASE("selection validation: 404, 400, 422") {
    Fixture f;
    auto c = f.client();
    auto r = post_json(c, "/api/images/nope/selection", {{"cluster_id", 1}, {"x", 5}, {"y", 1}});
    REQUIRE(r);
    CHECK(r->status == 404);

    r = c.Post("/api/images/img_a/selection", "{not json", "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);
    r = post_json(c, "/api/images/img_a/selection", {{"cluster_id", "one"}, {"x", 5}, {"y", 1}});
    REQUIRE(r);
    CHECK(r->status == 400);
    r = post_json(c, "/api/images/img_a/selection", {{"cluster_id", 1}, {"x", 5}});
    REQUIRE(r);
    CHECK(r->status == 400);

    // Click in cluster 2 while selecting cluster 1.
    r = post_json(c, "/api/images/img_a/selection", {{"cluster_id", 1}, {"x", 9}, {"y", 1}});
    REQUIRE(r);
    CHECK(r->status == 422);
    CHECK(body_of(r).at("error").get<std::string>().find("outside cluster 1") != std::string::npos);
    // Cluster 0 exists but is not a candidate (stale id).
    r = post_json(c, "/api/images/img_a/selection", {{"cluster_id", 0}, {"x", 1}, {"y", 1}});
    REQUIRE(r);
    CHECK(r->status == 422);
    r = post_json(c, "/api/images/img_a/selection", {{"cluster_id", 1}, {"x", 50}, {"y", 1}});
    REQUIRE(r);
    CHECK(r->status == 422);

    CHECK(f.session->selections().empty());
    CHECK_FALSE(fs::exists(f.journal));
  }

  TEST_CASE("finalize refuses until complete, then writes identical bytes") {
    Fixture f;
    auto c = f.client();
    auto r = post_json(c, "/api/images/img_a/selection", {{"cluster_id", 1}, {"x", 5}, {"y", 2}});
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(body_of(r).at("progress").at("selected") == 1);

    r = c.Post("/api/finalize", "", "application/json");
    REQUIRE(r);
    CHECK(r->status == 409);
    CHECK(body_of(r).at("unselected") == json({"img_b", "img_c"}));
    CHECK_FALSE(fs::exists(f.output));

    CHECK(post_json(c, "/api/images/img_c/selection", {{"cluster_id", 2}, {"x", 8}, {"y", 7}})->status == 200);
    CHECK(post_json(c, "/api/images/img_b/selection", {{"cluster_id", 1}, {"x", 4}, {"y", 0}})->status == 200);
    r = c.Get("/api/progress");
    REQUIRE(r);
    CHECK(body_of(r) == json({{"selected", 3}, {"total", 3}, {"complete", true}}));

    r = c.Post("/api/finalize", "", "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);
    const std::string first = slurp(f.output);
    const json doc = json::parse(first);
    CHECK(doc.at("run_id") == "run1");
    const auto sel = selections_from_json(doc);
    REQUIRE(sel.size() == 3);
    CHECK(sel[0] == Selection{"img_a", 1, {5, 2}});
    CHECK(sel[1] == Selection{"img_b", 1, {4, 0}});
    CHECK(sel[2] == Selection{"img_c", 2, {8, 7}});
    CHECK(fs::exists(f.output.parent_path() / "manifest.json"));

    r = c.Post("/api/finalize", "", "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(slurp(f.output) == first);
  }

  TEST_CASE("re-selecting one image changes only its record") {
    Fixture f;
    auto c = f.client();
    CHECK(post_json(c, "/api/images/img_a/selection", {{"cluster_id", 1}, {"x", 5}, {"y", 2}})->status == 200);
    CHECK(post_json(c, "/api/images/img_b/selection", {{"cluster_id", 1}, {"x", 4}, {"y", 0}})->status == 200);
    CHECK(post_json(c, "/api/images/img_c/selection", {{"cluster_id", 2}, {"x", 8}, {"y", 7}})->status == 200);
    REQUIRE(c.Post("/api/finalize", "", "application/json")->status == 200);
    const json before = json::parse(slurp(f.output));

    CHECK(post_json(c, "/api/images/img_b/selection", {{"cluster_id", 2}, {"x", 11}, {"y", 5}})->status == 200);
    REQUIRE(c.Post("/api/finalize", "", "application/json")->status == 200);
    const json after = json::parse(slurp(f.output));
    REQUIRE(after.at("selections").size() == 3);
    CHECK(after["selections"][0] == before["selections"][0]);
    CHECK(after["selections"][2] == before["selections"][2]);
    CHECK(after["selections"][1] == json({{"image_id", "img_b"}, {"cluster_id", 2}, {"x", 11}, {"y", 5}}));
  }

  TEST_CASE("the journal restores selections after a restart") {
    Fixture f;
    {
      auto c = f.client();
      CHECK(post_json(c, "/api/images/img_a/selection", {{"cluster_id", 1}, {"x", 5}, {"y", 2}})->status == 200);
      CHECK(post_json(c, "/api/images/img_a/selection", {{"cluster_id", 2}, {"x", 9}, {"y", 2}})->status == 200);
      CHECK(post_json(c, "/api/images/img_c/selection", {{"cluster_id", 2}, {"x", 8}, {"y", 7}})->status == 200);
    }
    // Each acknowledged selection is one synced journal line with a timestamp.
    std::ifstream in(f.journal);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
      ++lines;
      CHECK(json::parse(line).contains("timestamp"));
    }
    CHECK(lines == 3);

    f.open();
    const auto sel = f.session->selections();
    REQUIRE(sel.size() == 2);
    CHECK(sel[0] == Selection{"img_a", 2, {9, 2}});
    CHECK(sel[1] == Selection{"img_c", 2, {8, 7}});
    auto c = f.client();
    auto r = c.Get("/api/images");
    REQUIRE(r);
    const json list = body_of(r);
    CHECK(list["images"][0].at("selection") == json({{"cluster_id", 2}, {"x", 9}, {"y", 2}}));
    CHECK(list["images"][1].at("selected") == false);
  }

  TEST_CASE("corrupt journal lines are skipped with a warning") {
    TempDir t;
    const fs::path journal = t.path / "journal.jsonl";
    {
      std::ofstream out(journal);
      out << R"({"image_id":"img_a","cluster_id":1,"x":5,"y":2})" << "\n";
      out << "{truncated\n";
      out << R"({"image_id":"img_b","cluster_id":1,"x":9,"y":2})" << "\n";
      out << R"({"image_id":"gone","cluster_id":1,"x":5,"y":2})" << "\n";
    }
    std::vector<std::string> warnings;
    SelectionSession s("r", three_images(), journal, t.path / "sel.json",
                       [&](const std::string& w) { warnings.push_back(w); });
    const auto sel = s.selections();
    REQUIRE(sel.size() == 1);
    CHECK(sel[0].image_id == "img_a");
    CHECK(warnings.size() == 3);
    CHECK(warnings[0].find("line 2") != std::string::npos);
  }

  TEST_CASE("concurrent posts are all journaled and applied") {
    Fixture f;
    std::vector<std::thread> pool;
    std::atomic<int> ok{0};
    for (int t = 0; t < 6; ++t) {
      pool.emplace_back([&, t] {
        auto c = f.client();
        for (int i = 0; i < 10; ++i) {
          const std::string id = std::string("img_") + char('a' + (t + i) % 3);
          const int x = 4 + (t + i) % 4;
          auto r = post_json(c, "/api/images/" + id + "/selection", {{"cluster_id", 1}, {"x", x}, {"y", t}});
          if (r && r->status == 200) ++ok;
        }
      });
    }
    for (auto& th : pool) th.join();
    CHECK(ok == 60);
    std::ifstream in(f.journal);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
      ++lines;
      CHECK(json::accept(line));
    }
    CHECK(lines == 60);
    CHECK(f.session->selections().size() == 3);

    // Replaying the journal reproduces the in-memory state.
    const auto live = f.session->selections();
    f.open();
    CHECK(f.session->selections() == live);
  }

  TEST_CASE("binding a port in use fails with a clear error") {
    Fixture f;
    SelectionServer other(*f.session);
    try {
      other.bind("127.0.0.1", f.port);
      FAIL("expected the bind to fail");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find(std::to_string(f.port)) != std::string::npos);
    }
    CHECK_THROWS_AS(SelectionServer(*f.session).listen(), std::logic_error);
  }

  TEST_CASE("unknown paths and the root page") {
    Fixture f;
    auto c = f.client();
    auto r = c.Get("/api/nothing");
    REQUIRE(r);
    CHECK(r->status == 404);
    r = c.Get("/");
    REQUIRE(r);
    CHECK(r->status == 200);
  }
}
