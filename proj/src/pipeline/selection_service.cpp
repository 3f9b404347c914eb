#include "lesionforge/pipeline/selection_service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <set>
#include <stdexcept>
#include <thread>

#include "httplib.h"
#include "lesionforge/pipeline/artifacts.hpp"
#include "lesionforge/pipeline/image_io.hpp"

namespace lf::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void append_line_synced(const fs::path& path, const std::string& line) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error("cannot open journal " + path.string());
  const std::string data = line + "\n";
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      ::close(fd);
      throw std::runtime_error("journal write failed: " + path.string());
    }
    done += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

std::string overlay_url(const std::string& id, int cluster_id) {
  return "/api/images/" + id + "/overlay/" + std::to_string(cluster_id) + ".png";
}

}  // namespace

SelectionSession::SelectionSession(std::string run_id, std::vector<SessionImage> images, fs::path journal,
                                   fs::path selections_file, const Warn& warn)
    : run_id_(std::move(run_id)),
      images_(std::move(images)),
      journal_(std::move(journal)),
      selections_file_(std::move(selections_file)) {
  if (!fs::exists(journal_)) return;
  std::ifstream in(journal_);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json row = json::parse(line);
      Selection s{row.at("image_id").get<std::string>(), row.at("cluster_id").get<int>(),
                  {row.at("x").get<int>(), row.at("y").get<int>()}};
      const SessionImage* img = find(s.image_id);
      if (!img) throw std::runtime_error("unknown image '" + s.image_id + "'");
      if (auto err = check(*img, s.cluster_id, s.click)) throw std::runtime_error(*err);
      selected_[s.image_id] = s;
    } catch (const std::exception& e) {
      if (warn) warn("journal " + journal_.string() + " line " + std::to_string(line_no) + " ignored: " + e.what());
    }
  }
}

std::unique_ptr<SelectionSession> SelectionSession::open(const PipelineConfig& config, const Warn& warn) {
  const Dataset ds = load_dataset(config, warn);
  std::vector<SessionImage> images;
  for (const auto& id : ds.train_ids) {
    SessionImage img;
    img.id = id;
    img.image = ds.at(id).image;
    img.labels = load_cluster_labels(config, id);
    const json doc = read_json(config.stage_dir("candidates") / (id + ".json"), "candidates");
    for (const auto& c : doc.at("candidates")) {
      CandidateInfo info;
      info.cluster_id = c.at("cluster_id").get<int>();
      info.size = c.at("size").get<std::size_t>();
      info.center_of_mass = {c.at("center_of_mass")[0].get<double>(), c.at("center_of_mass")[1].get<double>()};
      info.fiducial = {c.at("fiducial")[0].get<int>(), c.at("fiducial")[1].get<int>()};
      img.candidates.push_back(info);
    }
    images.push_back(std::move(img));
  }
  const fs::path dir = config.stage_dir("serve");
  return std::make_unique<SelectionSession>(config.run_id, std::move(images), dir / "journal.jsonl",
                                            dir / "selections.json", warn);
}

const SessionImage* SelectionSession::find(const std::string& id) const {
  for (const auto& img : images_) {
    if (img.id == id) return &img;
  }
  return nullptr;
}

std::optional<std::string> SelectionSession::check(const SessionImage& image, int cluster_id, PixelCoord click) const {
  const bool offered = std::any_of(image.candidates.begin(), image.candidates.end(),
                                   [&](const CandidateInfo& c) { return c.cluster_id == cluster_id; });
  if (!offered) return "cluster " + std::to_string(cluster_id) + " is not a candidate for image " + image.id;
  if (click.x < 0 || click.y < 0 || static_cast<std::size_t>(click.x) >= image.labels.width ||
      static_cast<std::size_t>(click.y) >= image.labels.height) {
    return "click (" + std::to_string(click.x) + ", " + std::to_string(click.y) + ") lies outside the image";
  }
  const int at = image.labels.at(static_cast<std::size_t>(click.x), static_cast<std::size_t>(click.y));
  if (at != cluster_id) {
    return "click (" + std::to_string(click.x) + ", " + std::to_string(click.y) + ") lies outside cluster " +
           std::to_string(cluster_id) + " (it is in cluster " + std::to_string(at) + ")";
  }
  return std::nullopt;
}

std::vector<std::string> SelectionSession::unselected() const {
  std::vector<std::string> out;
  for (const auto& img : images_) {
    if (!selected_.count(img.id)) out.push_back(img.id);
  }
  return out;
}

json SelectionSession::images() const {
  std::shared_lock lock(state_mutex_);
  json list = json::array();
  for (const auto& img : images_) {
    json row = {{"id", img.id}, {"candidate_count", img.candidates.size()}, {"selected", false},
                {"selection", nullptr}};
    if (auto it = selected_.find(img.id); it != selected_.end()) {
      row["selected"] = true;
      row["selection"] = {{"cluster_id", it->second.cluster_id}, {"x", it->second.click.x}, {"y", it->second.click.y}};
    }
    list.push_back(row);
  }
  return {{"run_id", run_id_}, {"images", list}};
}

std::optional<json> SelectionSession::candidates(const std::string& image_id) const {
  const SessionImage* img = find(image_id);
  if (!img) return std::nullopt;
  json list = json::array();
  for (const auto& c : img->candidates) {
    list.push_back({{"cluster_id", c.cluster_id},
                    {"size", c.size},
                    {"center_of_mass", {c.center_of_mass.x, c.center_of_mass.y}},
                    {"fiducial", {c.fiducial.x, c.fiducial.y}},
                    {"overlay_url", overlay_url(img->id, c.cluster_id)}});
  }
  return json{{"image_id", img->id},
              {"width", img->image.width},
              {"height", img->image.height},
              {"total_pixels", img->labels.pixel_count()},
              {"image_url", "/api/images/" + img->id + "/image.png"},
              {"candidates", list}};
}

std::optional<std::vector<std::uint8_t>> SelectionSession::base_png(const std::string& image_id) const {
  const SessionImage* img = find(image_id);
  if (!img) return std::nullopt;
  return io::encode_png(img->image);
}

std::optional<std::vector<std::uint8_t>> SelectionSession::overlay_png(const std::string& image_id,
                                                                       int cluster_id) const {
  const SessionImage* img = find(image_id);
  if (!img) return std::nullopt;
  const bool offered = std::any_of(img->candidates.begin(), img->candidates.end(),
                                   [&](const CandidateInfo& c) { return c.cluster_id == cluster_id; });
  if (!offered) return std::nullopt;
  return io::encode_png(io::overlay(img->image, img->labels.region(cluster_id), {255, 0, 0}, 0.5));
}

json SelectionSession::progress() const {
  std::shared_lock lock(state_mutex_);
  const std::size_t done = selected_.size();
  return {{"selected", done}, {"total", images_.size()}, {"complete", done == images_.size()}};
}

SelectionSession::Outcome SelectionSession::select(const std::string& image_id, const json& body) {
  const SessionImage* img = find(image_id);
  if (!img) return {404, {{"error", "unknown image '" + image_id + "'"}}};
  Selection s;
  s.image_id = image_id;
  try {
    s.cluster_id = body.at("cluster_id").get<int>();
    s.click = {body.at("x").get<int>(), body.at("y").get<int>()};
  } catch (const json::exception&) {
    return {400, {{"error", "body must be {\"cluster_id\": int, \"x\": int, \"y\": int}"}}};
  }
  if (auto err = check(*img, s.cluster_id, s.click)) return {422, {{"error", *err}}};

  std::lock_guard writer(writer_mutex_);
  const json row = {{"image_id", s.image_id}, {"cluster_id", s.cluster_id}, {"x", s.click.x}, {"y", s.click.y},
                    {"timestamp", utc_timestamp()}};
  append_line_synced(journal_, row.dump());
  {
    std::unique_lock lock(state_mutex_);
    selected_[s.image_id] = s;
  }
  return {200, {{"image_id", s.image_id}, {"cluster_id", s.cluster_id}, {"x", s.click.x}, {"y", s.click.y},
                {"progress", progress()}}};
}

SelectionSession::Outcome SelectionSession::finalize() {
  std::lock_guard writer(writer_mutex_);
  std::vector<Selection> all;
  {
    std::shared_lock lock(state_mutex_);
    const std::vector<std::string> missing = unselected();
    if (!missing.empty()) return {409, {{"error", "selection incomplete"}, {"unselected", missing}}};
    for (const auto& [id, s] : selected_) all.push_back(s);
  }
  write_json(selections_file_, selections_to_json(run_id_, all));
  write_manifest(selections_file_.parent_path(), "serve", {journal_.filename().string()});
  return {200, {{"path", selections_file_.string()}, {"count", all.size()}}};
}

std::vector<Selection> SelectionSession::selections() const {
  std::shared_lock lock(state_mutex_);
  std::vector<Selection> out;
  for (const auto& [id, s] : selected_) out.push_back(s);
  return out;
}

struct SelectionServer::Impl {
  SelectionSession& session;
  httplib::Server server;
  std::thread thread;
  bool bound = false;

  explicit Impl(SelectionSession& s) : session(s) {}

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void routes(const std::optional<fs::path>& static_dir) {
    server.Get("/api/images", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, session.images());
    });
    server.Get(R"(/api/images/([^/]+)/candidates)", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = session.candidates(req.matches[1]);
      if (!body) return send_json(res, 404, {{"error", "unknown image '" + std::string(req.matches[1]) + "'"}});
      send_json(res, 200, *body);
    });
    server.Get(R"(/api/images/([^/]+)/image\.png)", [this](const httplib::Request& req, httplib::Response& res) {
      auto png = session.base_png(req.matches[1]);
      if (!png) return send_json(res, 404, {{"error", "unknown image"}});
      res.set_content(reinterpret_cast<const char*>(png->data()), png->size(), "image/png");
    });
    server.Get(R"(/api/images/([^/]+)/overlay/(-?\d+)\.png)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 int cluster = 0;
                 try {
                   cluster = std::stoi(req.matches[2]);
                 } catch (const std::exception&) {
                   return send_json(res, 404, {{"error", "bad cluster id"}});
                 }
                 auto png = session.overlay_png(req.matches[1], cluster);
                 if (!png) return send_json(res, 404, {{"error", "no such candidate"}});
                 res.set_content(reinterpret_cast<const char*>(png->data()), png->size(), "image/png");
               });
    server.Post(R"(/api/images/([^/]+)/selection)", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error&) {
        return send_json(res, 400, {{"error", "body is not valid JSON"}});
      }
      const auto out = session.select(req.matches[1], body);
      send_json(res, out.status, out.body);
    });
    server.Post("/api/finalize", [this](const httplib::Request&, httplib::Response& res) {
      const auto out = session.finalize();
      send_json(res, out.status, out.body);
    });
    server.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, session.progress());
    });
    if (static_dir && fs::is_directory(*static_dir)) {
      server.set_mount_point("/", static_dir->string());
    } else {
      server.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("lesionforge selection service; the API lives under /api\n", "text/plain");
      });
    }
  }
};

SelectionServer::SelectionServer(SelectionSession& session, std::optional<fs::path> static_dir)
    : impl_(std::make_unique<Impl>(session)) {
  // httplib's default also sets SO_REUSEPORT, which would let a second server
  // share a port that is already serving.
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  impl_->routes(static_dir);
}

SelectionServer::~SelectionServer() { stop(); }

int SelectionServer::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw std::runtime_error("could not bind any port on " + host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    throw std::runtime_error("port " + std::to_string(port) + " on " + host + " is unavailable (already in use?)");
  }
  impl_->bound = true;
  return bound;
}

void SelectionServer::listen() {
  if (!impl_->bound) throw std::logic_error("SelectionServer::listen called before bind");
  impl_->server.listen_after_bind();
}

void SelectionServer::start() {
  if (!impl_->bound) throw std::logic_error("SelectionServer::start called before bind");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void SelectionServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace lf::pipeline
