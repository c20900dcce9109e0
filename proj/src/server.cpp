#include "fvv/edge_server.hpp"

#include "fvv/log.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <algorithm>
#include <map>

namespace fvv {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

// Blocking socket shared by one reader thread and any number of writers.
struct TcpConn {
  explicit TcpConn(tcp::socket s) : sock(std::move(s)) {
    boost::system::error_code ec;
    sock.set_option(tcp::no_delay(true), ec);
  }

  bool write(std::span<const std::uint8_t> bytes) {
    std::lock_guard lock(wmu);
    boost::system::error_code ec;
    net::write(sock, net::buffer(bytes.data(), bytes.size()), ec);
    return !ec;
  }

  void shutdown() {
    boost::system::error_code ec;
    sock.shutdown(tcp::socket::shutdown_both, ec);
  }

  tcp::socket sock;
  std::mutex wmu;
};

std::string endpoint_text(const tcp::socket &s) {
  boost::system::error_code ec;
  const auto ep = s.remote_endpoint(ec);
  return ec ? std::string("?") : ep.address().to_string() + ":" + std::to_string(ep.port());
}

} // namespace

// A control-channel peer: a TCP control connection or a WebSocket session.
struct Peer : std::enable_shared_from_this<Peer> {
  virtual ~Peer() = default;
  virtual void send_control(const ControlMessage &msg) = 0;
  virtual void send_media(std::shared_ptr<const std::vector<std::uint8_t>> bytes) = 0;
  virtual void shutdown() = 0;
  virtual const char *kind() const = 0;

  std::uint64_t id = 0;
  bool hello = false;
  ctl::Role role = ctl::Role::viewer;
  std::vector<CameraId> cameras;
};

namespace {

struct TcpPeer : Peer {
  explicit TcpPeer(std::shared_ptr<TcpConn> c) : conn(std::move(c)) {}

  void send_control(const ControlMessage &msg) override { conn->write(encode_control(msg)); }

  void send_media(std::shared_ptr<const std::vector<std::uint8_t>> bytes) override {
    std::shared_ptr<TcpConn> m;
    {
      std::lock_guard lock(media_mu);
      m = media;
    }
    if (m && !m->write(*bytes)) {
      m->shutdown();
    }
  }

  void shutdown() override {
    conn->shutdown();
    std::lock_guard lock(media_mu);
    if (media) {
      media->shutdown();
    }
  }

  const char *kind() const override { return "tcp"; }

  std::shared_ptr<TcpConn> conn;
  std::mutex media_mu;
  std::shared_ptr<TcpConn> media; // attached viewer media connection
};

} // namespace

struct Server::Impl {
  Impl(BackgroundModel bg, ServerConfig c)
      : cfg(c), pipeline(std::move(bg), c), liveness(wall_clock_us, c.peer_timeout_us), media_acc(io),
        control_acc(io), ws_acc(io) {}

  void open(tcp::acceptor &acc, std::uint16_t port, const char *what);
  void start();
  void stop();

  template <typename Fn> void spawn(Fn &&fn) {
    std::lock_guard lock(threads_mu);
    threads.emplace_back(std::forward<Fn>(fn));
  }

  void accept_tcp(tcp::acceptor &acc, bool media);
  void accept_ws();
  void control_loop(std::shared_ptr<TcpPeer> peer);
  void media_loop(std::shared_ptr<TcpConn> conn);
  void pipeline_loop();
  void housekeeping_loop();

  void register_peer(const std::shared_ptr<Peer> &peer);
  void handle_control(const std::shared_ptr<Peer> &peer, const ControlMessage &msg, Timestamp received);
  void disconnect(const std::shared_ptr<Peer> &peer);
  bool attach_viewer_media(const std::shared_ptr<TcpConn> &conn);
  void detach_viewer_media(const std::shared_ptr<TcpConn> &conn);
  void ingest(TimedFrame frame);
  std::shared_ptr<Peer> viewer_peer();

  ServerConfig cfg;

  mutable std::mutex pipe_mu;
  EdgePipeline pipeline;

  mutable std::mutex peers_mu;
  std::map<std::uint64_t, std::shared_ptr<Peer>> peers;
  std::map<CameraId, std::uint64_t> owners;
  std::optional<std::uint64_t> viewer;
  std::vector<std::weak_ptr<TcpConn>> conns;

  LivenessMonitor liveness;

  std::mutex inbox_mu;
  std::condition_variable inbox_cv;
  std::deque<FramePtr> inbox;
  bool wake = false;

  net::io_context io;
  std::optional<net::executor_work_guard<net::io_context::executor_type>> work;
  tcp::acceptor media_acc, control_acc, ws_acc;
  std::uint16_t ports[3] = {0, 0, 0};

  std::thread io_thread, pipeline_thread, house_thread;
  std::mutex threads_mu;
  std::vector<std::thread> threads;

  std::atomic<bool> stopping{false};
  std::atomic<std::uint64_t> next_id{1};
  std::vector<CameraId> last_subs;
};

namespace {

// Browser viewer on the WebSocket bridge: text frames carry control JSON,
// binary frames carry FVVM media (server to browser).
class WsPeer : public Peer {
public:
  WsPeer(tcp::socket s, Server::Impl *srv) : ws_(std::move(s)), srv_(srv) {}

  void start() {
    ws_.binary(false);
    ws_.async_accept([self = shared()](beast::error_code ec) {
      if (ec) {
        self->srv_->disconnect(self);
        return;
      }
      self->read();
    });
  }

  void send_control(const ControlMessage &msg) override {
    auto text = std::make_shared<std::string>(control_to_json(msg));
    net::post(ws_.get_executor(), [self = shared(), text] { self->enqueue(Out{true, text, nullptr}); });
  }

  void send_media(std::shared_ptr<const std::vector<std::uint8_t>> bytes) override {
    net::post(ws_.get_executor(), [self = shared(), bytes] {
      // A slow browser loses frames rather than stalling the pipeline.
      if (self->queued_media_ >= 2) {
        return;
      }
      self->enqueue(Out{false, nullptr, bytes});
    });
  }

  void shutdown() override {
    net::post(ws_.get_executor(), [self = shared()] {
      beast::error_code ec;
      beast::get_lowest_layer(self->ws_).shutdown(tcp::socket::shutdown_both, ec);
    });
  }

  const char *kind() const override { return "ws"; }

private:
  struct Out {
    bool text;
    std::shared_ptr<std::string> str;
    std::shared_ptr<const std::vector<std::uint8_t>> bin;
  };

  std::shared_ptr<WsPeer> shared() { return std::static_pointer_cast<WsPeer>(shared_from_this()); }

  void read() {
    ws_.async_read(buf_, [self = shared()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->srv_->disconnect(self);
        return;
      }
      const auto received = wall_clock_us();
      if (self->ws_.got_text()) {
        const std::string text = beast::buffers_to_string(self->buf_.data());
        try {
          self->srv_->handle_control(self, control_from_json(text), received);
        } catch (const ProtocolError &e) {
          self->send_control(ctl::Error{ctl::kErrBadRequest, e.what()});
        }
      } else {
        self->send_control(ctl::Error{ctl::kErrNotAllowed, "binary frames are server to client only"});
      }
      self->buf_.consume(self->buf_.size());
      self->read();
    });
  }

  void enqueue(Out out) {
    if (closed_) {
      return;
    }
    queued_media_ += out.text ? 0 : 1;
    queue_.push_back(std::move(out));
    if (!writing_) {
      write();
    }
  }

  void write() {
    writing_ = true;
    const Out &front = queue_.front();
    ws_.text(front.text);
    auto done = [self = shared()](beast::error_code ec, std::size_t) {
      self->queued_media_ -= self->queue_.front().text ? 0 : 1;
      self->queue_.pop_front();
      self->writing_ = false;
      if (ec) {
        self->closed_ = true;
        self->queue_.clear();
        return;
      }
      if (!self->queue_.empty()) {
        self->write();
      }
    };
    if (front.text) {
      ws_.async_write(net::buffer(*front.str), done);
    } else {
      ws_.async_write(net::buffer(*front.bin), done);
    }
  }

  websocket::stream<tcp::socket> ws_;
  Server::Impl *srv_;
  beast::flat_buffer buf_;
  std::deque<Out> queue_;
  int queued_media_ = 0;
  bool writing_ = false;
  bool closed_ = false;
};

} // namespace

void Server::Impl::open(tcp::acceptor &acc, std::uint16_t port, const char *what) {
  boost::system::error_code ec;
  const auto addr = net::ip::make_address(cfg.bind, ec);
  if (ec) {
    throw ServerError(std::string("bad bind address \"") + cfg.bind + "\"");
  }
  const tcp::endpoint ep(addr, port);
  acc.open(ep.protocol(), ec);
  if (!ec) {
    acc.set_option(net::socket_base::reuse_address(true), ec);
    acc.bind(ep, ec);
  }
  if (!ec) {
    acc.listen(net::socket_base::max_listen_connections, ec);
  }
  if (ec) {
    throw ServerError(std::string("cannot listen on ") + what + " port " + std::to_string(port) + ": " + ec.message());
  }
}

void Server::Impl::start() {
  open(media_acc, cfg.media_port, "media");
  open(control_acc, cfg.control_port, "control");
  ports[0] = media_acc.local_endpoint().port();
  ports[1] = control_acc.local_endpoint().port();
  if (cfg.enable_ws) {
    open(ws_acc, cfg.ws_port, "websocket");
    ports[2] = ws_acc.local_endpoint().port();
  }
  {
    std::lock_guard lock(pipe_mu);
    pipeline.set_available({});
  }
  accept_tcp(media_acc, true);
  accept_tcp(control_acc, false);
  if (cfg.enable_ws) {
    accept_ws();
  }
  work.emplace(net::make_work_guard(io));
  io_thread = std::thread([this] { io.run(); });
  pipeline_thread = std::thread([this] { pipeline_loop(); });
  house_thread = std::thread([this] { housekeeping_loop(); });
  log::info("server_start", {{"media_port", ports[0]}, {"control_port", ports[1]}, {"ws_port", ports[2]}});
}

void Server::Impl::stop() {
  stopping = true;
  inbox_cv.notify_all();
  net::post(io, [this] {
    boost::system::error_code ec;
    media_acc.close(ec);
    control_acc.close(ec);
    ws_acc.close(ec);
  });
  std::vector<std::shared_ptr<Peer>> all;
  {
    std::lock_guard lock(peers_mu);
    for (auto &[id, p] : peers) {
      all.push_back(p);
    }
    for (auto &w : conns) {
      if (auto c = w.lock()) {
        c->shutdown();
      }
    }
  }
  for (auto &p : all) {
    p->shutdown();
  }
  work.reset();
  if (pipeline_thread.joinable()) {
    pipeline_thread.join();
  }
  if (house_thread.joinable()) {
    house_thread.join();
  }
  std::vector<std::thread> ts;
  {
    std::lock_guard lock(threads_mu);
    ts.swap(threads);
  }
  for (auto &t : ts) {
    t.join();
  }
  io.stop();
  if (io_thread.joinable()) {
    io_thread.join();
  }
  std::lock_guard lock(peers_mu);
  peers.clear();
  owners.clear();
  viewer.reset();
  log::info("server_stop");
}

void Server::Impl::accept_tcp(tcp::acceptor &acc, bool media) {
  acc.async_accept([this, &acc, media](boost::system::error_code ec, tcp::socket sock) {
    if (ec || stopping) {
      return;
    }
    auto conn = std::make_shared<TcpConn>(std::move(sock));
    {
      std::lock_guard lock(peers_mu);
      std::erase_if(conns, [](const auto &w) { return w.expired(); });
      conns.push_back(conn);
    }
    if (media) {
      spawn([this, conn] { media_loop(conn); });
    } else {
      auto peer = std::make_shared<TcpPeer>(conn);
      register_peer(peer);
      spawn([this, peer] { control_loop(peer); });
    }
    accept_tcp(acc, media);
  });
}

void Server::Impl::accept_ws() {
  ws_acc.async_accept([this](boost::system::error_code ec, tcp::socket sock) {
    if (ec || stopping) {
      return;
    }
    auto peer = std::make_shared<WsPeer>(std::move(sock), this);
    register_peer(peer);
    peer->start();
    accept_ws();
  });
}

void Server::Impl::register_peer(const std::shared_ptr<Peer> &peer) {
  peer->id = next_id++;
  {
    std::lock_guard lock(peers_mu);
    peers[peer->id] = peer;
  }
  liveness.touch(peer->id);
  log::debug("peer_connect", {{"peer", peer->id}, {"kind", peer->kind()}});
}

std::shared_ptr<Peer> Server::Impl::viewer_peer() {
  std::lock_guard lock(peers_mu);
  if (!viewer) {
    return nullptr;
  }
  const auto it = peers.find(*viewer);
  return it == peers.end() ? nullptr : it->second;
}

void Server::Impl::control_loop(std::shared_ptr<TcpPeer> peer) {
  ControlStreamParser parser;
  std::vector<std::uint8_t> buf(64 * 1024);
  try {
    for (;;) {
      boost::system::error_code ec;
      const std::size_t n = peer->conn->sock.read_some(net::buffer(buf), ec);
      if (ec) {
        break;
      }
      const auto received = wall_clock_us();
      parser.feed(std::span(buf.data(), n));
      while (auto msg = parser.next()) {
        handle_control(peer, *msg, received);
      }
    }
  } catch (const ProtocolError &e) {
    log::warn("control_protocol_error", {{"peer", peer->id}, {"error", e.what()}});
    peer->send_control(ctl::Error{ctl::kErrBadRequest, e.what()});
  }
  disconnect(peer);
  peer->conn->shutdown();
}

void Server::Impl::handle_control(const std::shared_ptr<Peer> &peer, const ControlMessage &msg, Timestamp received) {
  liveness.touch(peer->id);
  auto reply_error = [&](int code, const std::string &text) { peer->send_control(ctl::Error{code, text}); };

  if (const auto *hello = std::get_if<ctl::Hello>(&msg)) {
    if (peer->hello) {
      reply_error(ctl::kErrBadRequest, "duplicate hello");
      return;
    }
    if (hello->role == ctl::Role::viewer) {
      {
        std::lock_guard lock(peers_mu);
        if (viewer && *viewer != peer->id) {
          reply_error(ctl::kErrViewerSlotTaken, "viewer slot taken");
          return;
        }
        viewer = peer->id;
      }
      peer->hello = true;
      peer->role = ctl::Role::viewer;
      std::unique_lock lock(pipe_mu);
      ctl::Welcome w{pipeline.calibration(), wall_clock_us()};
      lock.unlock();
      peer->send_control(w);
      log::info("viewer_connect", {{"peer", peer->id}, {"kind", peer->kind()}});
      return;
    }
    std::unique_lock lock(pipe_mu);
    if (hello->cameras.empty()) {
      lock.unlock();
      reply_error(ctl::kErrBadRequest, "capture hello lists no cameras");
      return;
    }
    for (auto id : hello->cameras) {
      if (pipeline.calibration().find(id) == nullptr) {
        lock.unlock();
        reply_error(ctl::kErrBadRequest, "camera " + std::to_string(id) + " is not in the calibration");
        return;
      }
    }
    peer->hello = true;
    peer->role = ctl::Role::capture;
    peer->cameras = hello->cameras;
    std::vector<std::shared_ptr<Peer>> replaced;
    {
      std::lock_guard plock(peers_mu);
      for (auto id : hello->cameras) {
        const auto it = owners.find(id);
        if (it != owners.end() && it->second != peer->id) {
          if (auto p = peers.find(it->second); p != peers.end()) {
            replaced.push_back(p->second);
          }
        }
        owners[id] = peer->id;
      }
    }
    for (auto id : hello->cameras) {
      pipeline.mark_alive(id);
    }
    const auto subs = pipeline.subscriptions();
    ctl::Welcome w{pipeline.calibration(), wall_clock_us()};
    lock.unlock();
    for (auto &p : replaced) {
      p->shutdown();
    }
    peer->send_control(w);
    ctl::Subscribe sub;
    for (auto id : hello->cameras) {
      if (std::find(subs.begin(), subs.end(), id) != subs.end()) {
        sub.camera_ids.push_back(id);
      }
    }
    if (!sub.camera_ids.empty()) {
      peer->send_control(sub);
    }
    inbox_cv.notify_all();
    log::info("capture_connect", {{"peer", peer->id}, {"cameras", hello->cameras}});
    return;
  }

  if (const auto *probe = std::get_if<ctl::ClockProbe>(&msg)) {
    peer->send_control(ctl::ClockReply{probe->t1, received, wall_clock_us()});
    return;
  }

  if (const auto *vp = std::get_if<ctl::Viewpoint>(&msg)) {
    if (peer->hello && peer->role == ctl::Role::capture) {
      reply_error(ctl::kErrNotAllowed, "capture nodes cannot set the viewpoint");
      return;
    }
    {
      std::lock_guard lock(peers_mu);
      if (viewer && *viewer != peer->id) {
        reply_error(ctl::kErrViewerSlotTaken, "viewer slot taken");
        return;
      }
      viewer = peer->id;
    }
    CameraModel cam;
    try {
      cam = camera_from_viewpoint(*vp);
    } catch (const ProtocolError &e) {
      reply_error(ctl::kErrBadRequest, e.what());
      return;
    }
    if (cam.intrinsics.width % 2 != 0 || cam.intrinsics.height % 2 != 0) {
      reply_error(ctl::kErrBadRequest, "viewpoint: width and height must be even");
      return;
    }
    {
      std::lock_guard lock(pipe_mu);
      const auto &ref = pipeline.calibration().cameras.front().intrinsics;
      if (cam.intrinsics.width != ref.width || cam.intrinsics.height != ref.height) {
        reply_error(ctl::kErrBadRequest, "viewpoint: size must match the rig (" + std::to_string(ref.width) + "x" +
                                             std::to_string(ref.height) + ")");
        return;
      }
      pipeline.set_viewpoint(cam);
    }
    inbox_cv.notify_all();
    return;
  }

  if (std::holds_alternative<ctl::Subscribe>(msg) || std::holds_alternative<ctl::Unsubscribe>(msg)) {
    if (peer->role == ctl::Role::capture) {
      reply_error(ctl::kErrNotAllowed, "subscriptions are set by the server");
    }
    // Viewers may send them; the server owns the subscribed set, so they are ignored.
    return;
  }
  if (std::holds_alternative<ctl::Heartbeat>(msg)) {
    return;
  }
  if (std::holds_alternative<ctl::StatsRequest>(msg)) {
    std::unique_lock lock(pipe_mu);
    ctl::Stats s{pipeline.stats()};
    lock.unlock();
    peer->send_control(s);
    return;
  }
  reply_error(ctl::kErrBadRequest, "unexpected message type");
}

void Server::Impl::disconnect(const std::shared_ptr<Peer> &peer) {
  liveness.forget(peer->id);
  std::vector<CameraId> orphaned;
  bool was_viewer = false;
  std::shared_ptr<TcpConn> media;
  {
    std::lock_guard lock(peers_mu);
    if (peers.erase(peer->id) == 0) {
      return;
    }
    for (auto id : peer->cameras) {
      const auto it = owners.find(id);
      if (it != owners.end() && it->second == peer->id) {
        owners.erase(it);
        orphaned.push_back(id);
      }
    }
    if (viewer && *viewer == peer->id) {
      viewer.reset();
      was_viewer = true;
    }
  }
  if (auto tp = std::dynamic_pointer_cast<TcpPeer>(peer)) {
    std::lock_guard lock(tp->media_mu);
    media = std::exchange(tp->media, nullptr);
  }
  if (media) {
    media->shutdown();
  }
  {
    std::lock_guard lock(pipe_mu);
    for (auto id : orphaned) {
      pipeline.mark_lost(id);
    }
    if (was_viewer) {
      pipeline.clear_viewpoint();
    }
  }
  inbox_cv.notify_all();
  if (!orphaned.empty()) {
    log::warn("stream_lost", {{"peer", peer->id}, {"cameras", orphaned}, {"reason", "disconnect"}});
  } else if (was_viewer) {
    log::info("viewer_disconnect", {{"peer", peer->id}});
  } else {
    log::debug("peer_disconnect", {{"peer", peer->id}});
  }
}

bool Server::Impl::attach_viewer_media(const std::shared_ptr<TcpConn> &conn) {
  auto p = std::dynamic_pointer_cast<TcpPeer>(viewer_peer());
  if (!p) {
    return false;
  }
  std::lock_guard lock(p->media_mu);
  if (p->media) {
    return false;
  }
  p->media = conn;
  return true;
}

void Server::Impl::detach_viewer_media(const std::shared_ptr<TcpConn> &conn) {
  auto p = std::dynamic_pointer_cast<TcpPeer>(viewer_peer());
  if (!p) {
    return;
  }
  std::lock_guard lock(p->media_mu);
  if (p->media == conn) {
    p->media.reset();
  }
}

void Server::Impl::ingest(TimedFrame frame) {
  std::optional<std::uint64_t> owner;
  {
    std::lock_guard lock(peers_mu);
    if (const auto it = owners.find(frame.camera_id); it != owners.end()) {
      owner = it->second;
    }
  }
  if (!owner) {
    log::debug("frame_dropped", {{"camera", frame.camera_id}, {"reason", "no capture hello"}});
    return;
  }
  liveness.touch(*owner);
  {
    std::lock_guard lock(inbox_mu);
    inbox.push_back(std::make_shared<const TimedFrame>(std::move(frame)));
    wake = true;
  }
  inbox_cv.notify_one();
}

void Server::Impl::media_loop(std::shared_ptr<TcpConn> conn) {
  MediaStreamParser parser;
  FrameReassembler frames;
  bool sink = false;
  std::vector<std::uint8_t> buf(256 * 1024);
  const auto remote = endpoint_text(conn->sock);
  try {
    for (;;) {
      boost::system::error_code ec;
      const std::size_t n = conn->sock.read_some(net::buffer(buf), ec);
      if (ec) {
        break;
      }
      parser.feed(std::span(buf.data(), n));
      while (auto msg = parser.next()) {
        if (sink) {
          continue; // viewers have nothing to send on media
        }
        if (msg->camera_id == kVirtualCameraId) {
          if (msg->type != MediaType::color || msg->width != 0 || msg->height != 0 || !attach_viewer_media(conn)) {
            throw ProtocolError(ProtocolErrc::bad_type, "media attach refused");
          }
          sink = true;
          log::info("viewer_media_attach", {{"remote", remote}});
          continue;
        }
        if (auto f = frames.add(std::move(*msg))) {
          const auto *cam = [&] {
            std::lock_guard lock(pipe_mu);
            return pipeline.calibration().find(f->camera_id);
          }();
          if (cam == nullptr || f->color.width != cam->intrinsics.width ||
              f->color.height != cam->intrinsics.height) {
            throw ProtocolError(ProtocolErrc::size_mismatch,
                                "camera " + std::to_string(f->camera_id) + " does not match the calibration");
          }
          ingest(std::move(*f));
        }
      }
    }
  } catch (const ProtocolError &e) {
    log::warn("media_protocol_error", {{"remote", remote}, {"error", e.what()}});
  }
  if (sink) {
    detach_viewer_media(conn);
  }
  conn->shutdown();
}

void Server::Impl::pipeline_loop() {
  while (!stopping) {
    std::deque<FramePtr> batch;
    {
      std::unique_lock lock(inbox_mu);
      inbox_cv.wait_for(lock, std::chrono::milliseconds(2), [&] { return wake || stopping.load(); });
      wake = false;
      batch.swap(inbox);
    }
    if (stopping) {
      break;
    }
    std::optional<TickOutput> out;
    std::vector<CameraId> subs, lost;
    {
      std::lock_guard lock(pipe_mu);
      for (auto &f : batch) {
        pipeline.ingest(std::move(f));
      }
      try {
        out = pipeline.tick(wall_clock_us());
      } catch (const std::exception &e) {
        log::error("tick_failed", {{"error", e.what()}});
      }
      subs = pipeline.subscriptions();
      lost = pipeline.take_lost_events();
    }
    for (auto id : lost) {
      log::warn("stream_lost", {{"camera", id}, {"reason", "staleness"}});
    }
    if (subs != last_subs) {
      std::map<std::uint64_t, std::pair<ctl::Subscribe, ctl::Unsubscribe>> per_owner;
      std::vector<std::shared_ptr<Peer>> targets;
      {
        std::lock_guard lock(peers_mu);
        auto route = [&](CameraId id, bool add) {
          const auto it = owners.find(id);
          if (it == owners.end()) {
            return;
          }
          auto &e = per_owner[it->second];
          (add ? e.first.camera_ids : e.second.camera_ids).push_back(id);
        };
        for (auto id : subs) {
          if (std::find(last_subs.begin(), last_subs.end(), id) == last_subs.end()) {
            route(id, true);
          }
        }
        for (auto id : last_subs) {
          if (std::find(subs.begin(), subs.end(), id) == subs.end()) {
            route(id, false);
          }
        }
        for (auto &[owner, msgs] : per_owner) {
          if (auto it = peers.find(owner); it != peers.end()) {
            targets.push_back(it->second);
          }
        }
      }
      for (auto &p : targets) {
        const auto &[sub, unsub] = per_owner[p->id];
        if (!unsub.camera_ids.empty()) {
          p->send_control(unsub);
        }
        if (!sub.camera_ids.empty()) {
          p->send_control(sub);
        }
      }
      log::info("subscriptions", {{"cameras", subs}});
      last_subs = subs;
    }
    if (!out) {
      continue;
    }
    auto v = viewer_peer();
    if (!v) {
      continue;
    }
    if (out->selection_changed) {
      v->send_control(ctl::SelectionReport{out->tick_ts, out->view.active, out->view.subscribed});
      log::info("selection", {{"tick_ts", out->tick_ts}, {"active", out->view.active},
                              {"subscribed", out->view.subscribed}});
    }
    MediaMessage m;
    m.type = out->encoded_type;
    m.camera_id = kVirtualCameraId;
    m.capture_ts = out->tick_ts;
    m.width = out->frame.width;
    m.height = out->frame.height;
    m.payload = std::move(out->encoded);
    v->send_media(std::make_shared<const std::vector<std::uint8_t>>(encode_media(m)));
    if (log::enabled("debug")) {
      log::debug("tick", {{"tick_ts", out->tick_ts}, {"total_us", out->times.total_us()},
                          {"stale_active", out->stale_active}});
    }
  }
}

void Server::Impl::housekeeping_loop() {
  Timestamp last_beat = 0;
  while (!stopping) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    const auto now = wall_clock_us();
    std::vector<std::shared_ptr<Peer>> all;
    {
      std::lock_guard lock(peers_mu);
      for (auto &[id, p] : peers) {
        all.push_back(p);
      }
    }
    if (now - last_beat >= cfg.heartbeat_us) {
      last_beat = now;
      for (auto &p : all) {
        p->send_control(ctl::Heartbeat{now});
      }
    }
    for (auto id : liveness.expired()) {
      for (auto &p : all) {
        if (p->id == id) {
          log::warn("peer_timeout", {{"peer", id}, {"cameras", p->cameras}});
          p->shutdown();
          disconnect(p);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------

Server::Server(BackgroundModel background, ServerConfig config)
    : impl_(std::make_unique<Impl>(std::move(background), std::move(config))) {}

Server::~Server() { stop(); }

void Server::start() {
  if (running_) {
    return;
  }
  impl_->start();
  running_ = true;
}

void Server::stop() {
  if (!running_.exchange(false)) {
    return;
  }
  impl_->stop();
}

std::uint16_t Server::media_port() const { return impl_->ports[0]; }
std::uint16_t Server::control_port() const { return impl_->ports[1]; }
std::uint16_t Server::ws_port() const { return impl_->ports[2]; }

PipelineStats Server::stats_snapshot() const {
  std::lock_guard lock(impl_->pipe_mu);
  return impl_->pipeline.stats();
}

std::optional<ViewState> Server::view_snapshot() const {
  std::lock_guard lock(impl_->pipe_mu);
  return impl_->pipeline.view();
}

std::set<CameraId> Server::connected_cameras() const {
  std::lock_guard lock(impl_->peers_mu);
  std::set<CameraId> out;
  for (const auto &[id, owner] : impl_->owners) {
    out.insert(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clients

namespace {

tcp::socket connect_to(net::io_context &io, const std::string &host, std::uint16_t port) {
  tcp::socket sock(io);
  boost::system::error_code ec;
  tcp::resolver resolver(io);
  const auto eps = resolver.resolve(host, std::to_string(port), ec);
  if (!ec) {
    net::connect(sock, eps, ec);
  }
  if (ec) {
    throw ServerError("cannot connect to " + host + ":" + std::to_string(port) + ": " + ec.message());
  }
  sock.set_option(tcp::no_delay(true), ec);
  return sock;
}

void write_all(tcp::socket &sock, std::mutex &mu, std::span<const std::uint8_t> bytes) {
  std::lock_guard lock(mu);
  boost::system::error_code ec;
  net::write(sock, net::buffer(bytes.data(), bytes.size()), ec);
  if (ec) {
    throw ServerError("send failed: " + ec.message());
  }
}

// Blocks until the parser yields a message.
ControlMessage read_control(tcp::socket &sock, ControlStreamParser &parser) {
  std::array<std::uint8_t, 16384> buf{};
  for (;;) {
    if (auto m = parser.next()) {
      return *m;
    }
    boost::system::error_code ec;
    const std::size_t n = sock.read_some(net::buffer(buf), ec);
    if (ec) {
      throw ServerError("control connection closed: " + ec.message());
    }
    parser.feed(std::span(buf.data(), n));
  }
}

} // namespace

struct CaptureNode::Impl {
  Impl(CaptureNode *o, std::shared_ptr<const Scene> s, CameraModel cam, DepthQuantizer q, CaptureNodeConfig c)
      : owner(o), scene(std::move(s)), renderer(*scene, std::move(cam), q), cfg(std::move(c)) {}

  Timestamp local_now() const { return cfg.local_clock.local_from_shared(wall_clock_us()); }
  Timestamp shared_now() const {
    return static_cast<Timestamp>(static_cast<std::int64_t>(local_now()) + offset.load());
  }
  void fail(const std::string &what) {
    std::lock_guard lock(mu);
    if (!failure) {
      failure = what;
    }
  }
  void handle(const ControlMessage &m) {
    const auto mine = [&](const std::vector<CameraId> &ids) {
      return std::find(ids.begin(), ids.end(), cfg.camera) != ids.end();
    };
    if (const auto *s = std::get_if<ctl::Subscribe>(&m); s && mine(s->camera_ids)) {
      owner->subscribed_ = true;
    } else if (const auto *u = std::get_if<ctl::Unsubscribe>(&m); u && mine(u->camera_ids)) {
      owner->subscribed_ = false;
    } else if (const auto *e = std::get_if<ctl::Error>(&m)) {
      log::warn("server_error", {{"camera", cfg.camera}, {"code", e->code}, {"text", e->text}});
    }
  }
  void reader_loop();
  void capture_loop();
  void halt();

  CaptureNode *owner;
  std::shared_ptr<const Scene> scene;
  CameraRenderer renderer;
  CaptureNodeConfig cfg;

  net::io_context io;
  std::optional<tcp::socket> ctl_sock, media_sock;
  std::mutex ctl_mu, media_mu;
  ControlStreamParser parser;
  std::thread reader, capture;

  mutable std::mutex mu;
  std::condition_variable cv;
  bool halting = false;
  std::optional<std::string> failure;
  OffsetEstimate estimate;
  std::atomic<std::int64_t> offset{0};
};

void CaptureNode::Impl::reader_loop() {
  try {
    for (;;) {
      handle(read_control(*ctl_sock, parser));
    }
  } catch (const std::exception &e) {
    std::lock_guard lock(mu);
    if (!halting && !failure) {
      failure = e.what();
    }
  }
  owner->subscribed_ = false;
  cv.notify_all();
}

void CaptureNode::Impl::capture_loop() {
  Timestamp last_beat = 0;
  for (;;) {
    const auto shared = shared_now();
    const Timestamp tick = (shared / cfg.period_us + 1) * cfg.period_us;
    {
      std::unique_lock lock(mu);
      if (cv.wait_for(lock, std::chrono::microseconds(tick - shared), [&] { return halting || failure.has_value(); })) {
        return;
      }
    }
    try {
      if (tick - last_beat >= cfg.heartbeat_us) {
        last_beat = tick;
        write_all(*ctl_sock, ctl_mu, encode_control(ctl::Heartbeat{tick}));
      }
      if (!owner->subscribed_) {
        continue;
      }
      const auto frame = make_timed_frame(cfg.camera, tick, renderer.render(tick));
      for (const auto &m : frame_to_media(frame, cfg.compress)) {
        write_all(*media_sock, media_mu, encode_media(m));
      }
      ++owner->frames_sent_;
    } catch (const std::exception &e) {
      std::lock_guard lock(mu);
      if (!halting) {
        fail(e.what());
      }
      return;
    }
  }
}

void CaptureNode::Impl::halt() {
  {
    std::lock_guard lock(mu);
    halting = true;
  }
  cv.notify_all();
  boost::system::error_code ec;
  if (ctl_sock) {
    ctl_sock->shutdown(tcp::socket::shutdown_both, ec);
  }
  if (media_sock) {
    media_sock->shutdown(tcp::socket::shutdown_both, ec);
  }
  if (capture.joinable()) {
    capture.join();
  }
  if (reader.joinable()) {
    reader.join();
  }
  if (ctl_sock) {
    ctl_sock->close(ec);
  }
  if (media_sock) {
    media_sock->close(ec);
  }
}

CaptureNode::CaptureNode(std::shared_ptr<const Scene> scene, CameraModel camera, DepthQuantizer quantizer,
                         CaptureNodeConfig config) {
  if (!scene) {
    throw ServerError("capture node needs a scene");
  }
  if (config.period_us == 0) {
    throw ServerError("capture period must be positive");
  }
  camera.id = config.camera;
  impl_ = std::make_unique<Impl>(this, std::move(scene), std::move(camera), quantizer, std::move(config));
}

CaptureNode::~CaptureNode() { stop(); }

void CaptureNode::start() {
  auto &d = *impl_;
  d.ctl_sock.emplace(connect_to(d.io, d.cfg.host, d.cfg.control_port));
  d.media_sock.emplace(connect_to(d.io, d.cfg.host, d.cfg.media_port));
  write_all(*d.ctl_sock, d.ctl_mu, encode_control(ctl::Hello{ctl::Role::capture, {d.cfg.camera}}));

  // Welcome first, then clock probes; anything else (an early Subscribe) is handled in passing.
  for (;;) {
    const auto m = read_control(*d.ctl_sock, d.parser);
    if (std::holds_alternative<ctl::Welcome>(m)) {
      break;
    }
    if (const auto *e = std::get_if<ctl::Error>(&m)) {
      throw ServerError("server refused camera " + std::to_string(d.cfg.camera) + ": " + e->text);
    }
    d.handle(m);
  }
  std::optional<OffsetEstimate> best;
  for (int i = 0; i < std::max(1, d.cfg.clock_probes); ++i) {
    const auto t1 = d.local_now();
    write_all(*d.ctl_sock, d.ctl_mu, encode_control(ctl::ClockProbe{t1}));
    for (;;) {
      const auto m = read_control(*d.ctl_sock, d.parser);
      const auto *r = std::get_if<ctl::ClockReply>(&m);
      if (r == nullptr || r->t1 != t1) {
        d.handle(m);
        continue;
      }
      const auto est = estimate_offset(r->t1, r->t2, r->t3, d.local_now());
      if (!best || est.delay_us < best->delay_us) {
        best = est;
      }
      break;
    }
  }
  {
    std::lock_guard lock(d.mu);
    d.estimate = *best;
  }
  d.offset = best->offset_us;
  log::info("capture_start", {{"camera", d.cfg.camera}, {"offset_us", best->offset_us}, {"delay_us", best->delay_us}});
  d.reader = std::thread([&d] { d.reader_loop(); });
  d.capture = std::thread([&d] { d.capture_loop(); });
}

void CaptureNode::kill() { impl_->halt(); }

void CaptureNode::stop() { impl_->halt(); }

OffsetEstimate CaptureNode::offset() const {
  std::lock_guard lock(impl_->mu);
  return impl_->estimate;
}

std::optional<std::string> CaptureNode::failure() const {
  std::lock_guard lock(impl_->mu);
  return impl_->failure;
}

// ---------------------------------------------------------------------------

struct ViewerClient::Impl {
  net::io_context io;
  std::optional<tcp::socket> ctl_sock, media_sock;
  std::mutex ctl_mu;
  ControlStreamParser parser;
  std::thread ctl_reader, media_reader, beat;

  std::mutex mu;
  std::condition_variable cv;
  std::deque<ControlMessage> control_q;
  std::deque<MediaMessage> media_q;
  bool open = false;
  bool closing = false;

  void shutdown_sockets() {
    boost::system::error_code ec;
    if (ctl_sock) {
      ctl_sock->shutdown(tcp::socket::shutdown_both, ec);
    }
    if (media_sock) {
      media_sock->shutdown(tcp::socket::shutdown_both, ec);
    }
  }
};

ViewerClient::ViewerClient() : impl_(std::make_unique<Impl>()) {}

ViewerClient::~ViewerClient() { close(); }

std::variant<ctl::Welcome, ctl::Error> ViewerClient::connect(const std::string &host, std::uint16_t control_port,
                                                             std::uint16_t media_port, bool attach_media) {
  auto &d = *impl_;
  if (d.ctl_sock) {
    throw ServerError("viewer client already connected");
  }
  d.ctl_sock.emplace(connect_to(d.io, host, control_port));
  write_all(*d.ctl_sock, d.ctl_mu, encode_control(ctl::Hello{ctl::Role::viewer, {}}));
  std::variant<ctl::Welcome, ctl::Error> result;
  for (;;) {
    const auto m = read_control(*d.ctl_sock, d.parser);
    if (const auto *e = std::get_if<ctl::Error>(&m)) {
      result = *e;
      break;
    }
    if (const auto *w = std::get_if<ctl::Welcome>(&m)) {
      result = *w;
      break;
    }
  }
  // A refused viewer stays connected so it can still talk to the server.
  if (attach_media && std::holds_alternative<ctl::Welcome>(result)) {
    d.media_sock.emplace(connect_to(d.io, host, media_port));
    MediaMessage attach;
    attach.type = MediaType::color;
    attach.camera_id = kVirtualCameraId;
    std::mutex unused;
    write_all(*d.media_sock, unused, encode_media(attach));
  }
  {
    std::lock_guard lock(d.mu);
    d.open = true;
  }
  d.ctl_reader = std::thread([&d] {
    try {
      for (;;) {
        auto m = read_control(*d.ctl_sock, d.parser);
        if (std::holds_alternative<ctl::Heartbeat>(m)) {
          continue;
        }
        std::lock_guard lock(d.mu);
        d.control_q.push_back(std::move(m));
        d.cv.notify_all();
      }
    } catch (const std::exception &) {
    }
    std::lock_guard lock(d.mu);
    d.open = false;
    d.cv.notify_all();
  });
  if (d.media_sock) {
    d.media_reader = std::thread([&d] {
      MediaStreamParser parser;
      std::vector<std::uint8_t> buf(256 * 1024);
      try {
        for (;;) {
          boost::system::error_code ec;
          const std::size_t n = d.media_sock->read_some(net::buffer(buf), ec);
          if (ec) {
            break;
          }
          parser.feed(std::span(buf.data(), n));
          while (auto m = parser.next()) {
            std::lock_guard lock(d.mu);
            d.media_q.push_back(std::move(*m));
            if (d.media_q.size() > 64) {
              d.media_q.pop_front();
            }
            d.cv.notify_all();
          }
        }
      } catch (const ProtocolError &) {
      }
      std::lock_guard lock(d.mu);
      d.cv.notify_all();
    });
  }
  d.beat = std::thread([&d] {
    std::unique_lock lock(d.mu);
    while (!d.closing && d.open) {
      if (d.cv.wait_for(lock, std::chrono::microseconds(kHeartbeatPeriodUs), [&] { return d.closing || !d.open; })) {
        break;
      }
      lock.unlock();
      try {
        write_all(*d.ctl_sock, d.ctl_mu, encode_control(ctl::Heartbeat{wall_clock_us()}));
      } catch (const ServerError &) {
      }
      lock.lock();
    }
  });
  return result;
}

void ViewerClient::send(const ControlMessage &msg) {
  if (!impl_->ctl_sock) {
    throw ServerError("viewer client not connected");
  }
  write_all(*impl_->ctl_sock, impl_->ctl_mu, encode_control(msg));
}

void ViewerClient::send_viewpoint(const CameraModel &cam) { send(viewpoint_from_camera(cam, wall_clock_us())); }

std::optional<ControlMessage> ViewerClient::next_control(std::chrono::milliseconds timeout) {
  auto &d = *impl_;
  std::unique_lock lock(d.mu);
  d.cv.wait_for(lock, timeout, [&] { return !d.control_q.empty() || !d.open; });
  if (d.control_q.empty()) {
    return std::nullopt;
  }
  auto m = std::move(d.control_q.front());
  d.control_q.pop_front();
  return m;
}

std::optional<MediaMessage> ViewerClient::next_media(std::chrono::milliseconds timeout) {
  auto &d = *impl_;
  std::unique_lock lock(d.mu);
  d.cv.wait_for(lock, timeout, [&] { return !d.media_q.empty() || !d.open; });
  if (d.media_q.empty()) {
    return std::nullopt;
  }
  auto m = std::move(d.media_q.front());
  d.media_q.pop_front();
  return m;
}

bool ViewerClient::connected() const {
  std::lock_guard lock(impl_->mu);
  return impl_->open;
}

void ViewerClient::close() {
  auto &d = *impl_;
  {
    std::lock_guard lock(d.mu);
    d.closing = true;
  }
  d.cv.notify_all();
  d.shutdown_sockets();
  for (auto *t : {&d.beat, &d.ctl_reader, &d.media_reader}) {
    if (t->joinable()) {
      t->join();
    }
  }
  boost::system::error_code ec;
  if (d.ctl_sock) {
    d.ctl_sock->close(ec);
  }
  if (d.media_sock) {
    d.media_sock->close(ec);
  }
}

} // namespace fvv
