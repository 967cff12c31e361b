#include "hatpic/websocket.hpp"

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <boost/beast/websocket.hpp>

#include <deque>
#include <fstream>
#include <mutex>
#include <sstream>
#include <vector>

#include <spdlog/spdlog.h>

#include "hatpic/bus.hpp"
#include "hatpic/transport.hpp"

namespace hatpic {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace ws = beast::websocket;
using tcp = net::ip::tcp;

namespace {

constexpr std::size_t kClientQueueLimit = 256;

std::string_view mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript; charset=utf-8";
  if (ext == ".css") return "text/css; charset=utf-8";
  if (ext == ".json" || ext == ".map") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/x-icon";
  return "application/octet-stream";
}

class WsSession;

}  // namespace

struct WsServer::Impl {
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::thread thread;
  std::filesystem::path static_dir;
  Handler handler;

  std::mutex mu;
  std::vector<std::weak_ptr<WsSession>> sessions;

  void accept();
  void add(const std::shared_ptr<WsSession>& s);
};

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, WsServer::Handler& handler)
      : ws_(std::move(socket)), handler_(handler) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(ws::stream_base::timeout::suggested(beast::role_type::server));
    ws_.text(true);
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->read();
    });
  }

  void send(std::shared_ptr<const std::string> line) {
    net::post(ws_.get_executor(), [self = shared_from_this(), line] {
      if (self->queue_.size() >= kClientQueueLimit) self->queue_.pop_front();
      self->queue_.push_back(line);
      if (self->queue_.size() == 1) self->write();
    });
  }

  bool open() const { return open_.load(); }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->open_ = false;
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      try {
        self->handler_(BusMessage::parse(text));
      } catch (const MessageError& e) {
        BusMessage err{std::string(topics::bus_error), 0.0, {{"error", e.what()}}};
        self->send(std::make_shared<const std::string>(err.to_line()));
      }
      self->read();
    });
  }

  void write() {
    ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->open_ = false;
        self->queue_.clear();
        return;
      }
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  ws::stream<beast::tcp_stream> ws_;
  WsServer::Handler& handler_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  std::atomic<bool> open_{true};
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, WsServer::Impl& server) : stream_(std::move(socket)), server_(server) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(10));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (!ec) self->on_request();
    });
  }

 private:
  void on_request() {
    if (ws::is_upgrade(req_)) {
      stream_.expires_never();
      auto s = std::make_shared<WsSession>(stream_.release_socket(), server_.handler);
      server_.add(s);
      s->run(std::move(req_));
      return;
    }
    respond();
  }

  void respond() {
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->set(http::field::server, "hatpic");
    res->keep_alive(false);

    auto fail = [&](http::status st, std::string text) {
      res->result(st);
      res->set(http::field::content_type, "text/plain; charset=utf-8");
      res->body() = std::move(text);
    };

    const std::string target(req_.target());
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      fail(http::status::method_not_allowed, "method not allowed\n");
    } else if (server_.static_dir.empty()) {
      fail(http::status::not_found, "no static directory configured\n");
    } else if (target.empty() || target[0] != '/' || target.find("..") != std::string::npos) {
      fail(http::status::bad_request, "bad path\n");
    } else {
      std::string rel = target.substr(1, target.find('?') == std::string::npos ? std::string::npos
                                                                               : target.find('?') - 1);
      if (rel.empty() || rel.back() == '/') rel += "index.html";
      const auto path = server_.static_dir / rel;
      std::ifstream in(path, std::ios::binary);
      if (!in) {
        fail(http::status::not_found, "not found\n");
      } else {
        std::ostringstream body;
        body << in.rdbuf();
        res->result(http::status::ok);
        res->set(http::field::content_type, std::string(mime_type(path)));
        res->body() = body.str();
      }
    }
    res->prepare_payload();
    if (req_.method() == http::verb::head) res->body().clear();

    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  beast::tcp_stream stream_;
  WsServer::Impl& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

void WsServer::Impl::accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) {
      if (ec == net::error::operation_aborted) return;
      spdlog::warn("ws: accept failed: {}", ec.message());
    } else {
      std::make_shared<HttpSession>(std::move(socket), *this)->run();
    }
    accept();
  });
}

void WsServer::Impl::add(const std::shared_ptr<WsSession>& s) {
  std::lock_guard lock(mu);
  std::erase_if(sessions, [](const auto& w) {
    auto p = w.lock();
    return !p || !p->open();
  });
  sessions.push_back(s);
}

WsServer::WsServer(std::string listen_addr, std::filesystem::path static_dir, Handler on_inbound)
    : impl_(std::make_unique<Impl>()) {
  impl_->static_dir = std::move(static_dir);
  impl_->handler = std::move(on_inbound);
  const auto [host, port] = split_host_port(listen_addr);
  beast::error_code ec;
  const auto address = net::ip::make_address(host == "localhost" ? "127.0.0.1" : host, ec);
  if (ec) throw BindError("ws: bad address " + listen_addr);
  const tcp::endpoint ep{address, port};
  impl_->acceptor.open(ep.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(ep, ec);
  if (!ec) impl_->acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) throw BindError("bind " + listen_addr + ": " + ec.message());
  port_ = impl_->acceptor.local_endpoint().port();
}

WsServer::~WsServer() { stop(); }

void WsServer::start() {
  impl_->accept();
  impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

void WsServer::stop() {
  if (!impl_) return;
  impl_->ioc.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void WsServer::broadcast(const BusMessage& msg) {
  auto line = std::make_shared<const std::string>(msg.to_line());
  std::lock_guard lock(impl_->mu);
  for (const auto& w : impl_->sessions) {
    if (auto s = w.lock(); s && s->open()) s->send(line);
  }
}

std::size_t WsServer::client_count() const {
  std::lock_guard lock(impl_->mu);
  std::size_t n = 0;
  for (const auto& w : impl_->sessions) {
    if (auto s = w.lock(); s && s->open()) ++n;
  }
  return n;
}

}  // namespace hatpic
