#include "visionsim/ws_server.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <thread>
#include <variant>

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace visionsim::runner {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

struct Inbound {
  enum class Kind { open, text, close } kind;
  std::uint64_t connection;
  std::string text;
};

class Inbox {
 public:
  void push(Inbound item) {
    {
      std::lock_guard lock(mutex_);
      items_.push_back(std::move(item));
    }
    ready_.notify_one();
  }

  /// Waits until an item arrives, `deadline` passes or stop is requested.
  std::deque<Inbound> wait(std::chrono::steady_clock::time_point deadline,
                           const std::atomic<bool>& stopping) {
    std::unique_lock lock(mutex_);
    ready_.wait_until(lock, deadline, [&] { return !items_.empty() || stopping.load(); });
    return std::exchange(items_, {});
  }

  void wake() { ready_.notify_all(); }

 private:
  std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<Inbound> items_;
};

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, std::uint64_t id, Inbox& inbox)
      : stream_(std::move(socket)), id_(id), inbox_(inbox) {}

  std::uint64_t id() const { return id_; }

  void start() { read_request(); }

  /// Runs on the network thread.
  void send(std::string text) {
    if (closed_) return;
    outbox_.push_back(std::move(text));
    if (outbox_.size() == 1) write_next();
  }

 private:
  void read_request() {
    auto self = shared_from_this();
    http::async_read(stream_, buffer_, request_, [self](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!websocket::is_upgrade(self->request_)) {
        self->reject();
        return;
      }
      self->accept();
    });
  }

  void reject() {
    auto response = std::make_shared<http::response<http::string_body>>(
        http::status::upgrade_required, request_.version());
    response->set(http::field::content_type, "text/plain");
    response->body() = "visionsim session service: connect with a WebSocket client\n";
    response->prepare_payload();
    auto self = shared_from_this();
    http::async_write(stream_, *response, [self, response](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_both, ignored);
    });
  }

  void accept() {
    ws_.emplace(std::move(stream_));
    ws_->text(true);
    auto self = shared_from_this();
    ws_->async_accept(request_, [self](beast::error_code ec) {
      if (ec) return;
      self->open_ = true;
      self->inbox_.push({Inbound::Kind::open, self->id_, {}});
      self->read_frame();
    });
  }

  void read_frame() {
    auto self = shared_from_this();
    ws_->async_read(frame_, [self](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      self->inbox_.push({Inbound::Kind::text, self->id_, beast::buffers_to_string(self->frame_.data())});
      self->frame_.consume(self->frame_.size());
      self->read_frame();
    });
  }

  void write_next() {
    if (!ws_ || !open_) return;
    auto self = shared_from_this();
    ws_->async_write(net::buffer(outbox_.front()), [self](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      self->outbox_.pop_front();
      if (!self->outbox_.empty()) self->write_next();
    });
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    outbox_.clear();
    if (open_) inbox_.push({Inbound::Kind::close, id_, {}});
  }

  beast::tcp_stream stream_;
  std::optional<websocket::stream<beast::tcp_stream>> ws_;
  beast::flat_buffer buffer_;
  beast::flat_buffer frame_;
  http::request<http::string_body> request_;
  std::deque<std::string> outbox_;
  std::uint64_t id_;
  Inbox& inbox_;
  bool open_ = false;
  bool closed_ = false;
};

}  // namespace

struct WebSocketServer::Impl {
  Impl(SessionService& s, ServeOptions o)
      : service(s), options(std::move(o)), acceptor(ioc) {
    const tcp::endpoint endpoint(net::ip::make_address(options.address), options.port);
    acceptor.open(endpoint.protocol());
    acceptor.set_option(net::socket_base::reuse_address(true));
    acceptor.bind(endpoint);
    acceptor.listen();
    bound_port = acceptor.local_endpoint().port();
  }

  void do_accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      auto conn = std::make_shared<Connection>(std::move(socket), ++next_id, inbox);
      {
        std::lock_guard lock(connections_mutex);
        connections[conn->id()] = conn;
      }
      conn->start();
      do_accept();
    });
  }

  void deliver(std::vector<Outbound> out) {
    for (auto& o : out) {
      std::vector<std::shared_ptr<Connection>> targets;
      {
        std::lock_guard lock(connections_mutex);
        for (auto it = connections.begin(); it != connections.end();) {
          auto conn = it->second.lock();
          if (!conn) {
            it = connections.erase(it);
            continue;
          }
          if (o.connection == 0 || o.connection == it->first) targets.push_back(conn);
          ++it;
        }
      }
      const std::string text = o.message.dump();
      for (auto& conn : targets) {
        net::post(ioc, [conn, text] { conn->send(text); });
      }
    }
  }

  SessionService& service;
  ServeOptions options;
  net::io_context ioc;
  tcp::acceptor acceptor;
  unsigned short bound_port = 0;
  Inbox inbox;
  std::atomic<bool> stopping{false};
  std::uint64_t next_id = 0;
  std::mutex connections_mutex;
  std::map<std::uint64_t, std::weak_ptr<Connection>> connections;
};

WebSocketServer::WebSocketServer(SessionService& service, ServeOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {
  if (!(impl_->options.tick_hz > 0.0)) throw ValidationError("tick rate must be > 0", {"tick_hz"});
}

WebSocketServer::~WebSocketServer() { stop(); }

unsigned short WebSocketServer::port() const noexcept { return impl_->bound_port; }

void WebSocketServer::stop() {
  impl_->stopping = true;
  impl_->ioc.stop();
  impl_->inbox.wake();
}

void WebSocketServer::run() {
  Impl& s = *impl_;
  s.do_accept();
  auto guard = net::make_work_guard(s.ioc);
  std::thread network([&s] { s.ioc.run(); });

  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(
      std::chrono::duration<double>(1.0 / s.options.tick_hz));
  auto last_tick = clock::now();
  while (!s.stopping) {
    for (auto& in : s.inbox.wait(last_tick + period, s.stopping)) {
      switch (in.kind) {
        case Inbound::Kind::open: s.deliver(s.service.connect(in.connection)); break;
        case Inbound::Kind::text: s.deliver(s.service.handle(in.connection, in.text)); break;
        case Inbound::Kind::close: s.service.disconnect(in.connection); break;
      }
    }
    const auto now = clock::now();
    if (now - last_tick >= period) {
      s.deliver(s.service.tick(std::chrono::duration<double>(now - last_tick).count()));
      last_tick = now;
    }
  }
  guard.reset();
  s.ioc.stop();
  network.join();
}

}  // namespace visionsim::runner
