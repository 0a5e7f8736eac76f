#pragma once

// WebSocket transport for NavServer (Boost.Beast). Each connection is one
// session; text frames in, text frames out. Plain HTTP GETs on the same port
// are answered from an optional static web root so a browser client can be
// served alongside the protocol endpoint.

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/version.hpp>
#include <boost/beast/websocket.hpp>

#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "navstack/nav_server.hpp"

namespace navstack {

namespace ws_detail {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

inline std::string mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket socket, NavServer& server, std::optional<std::filesystem::path> web_root)
      : ws_(std::move(socket)), server_(server), web_root_(std::move(web_root)) {}

  ~WsConnection() {
    if (id_) server_.close_session(*id_);
  }

  void run() {
    net::dispatch(ws_.get_executor(), [self = shared_from_this()] { self->read_request(); });
  }

 private:
  void read_request() {
    http::async_read(ws_.next_layer(), buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       if (ec) return;
                       self->on_request();
                     });
  }

  void on_request() {
    if (websocket::is_upgrade(request_)) {
      ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      ws_.async_accept(request_, [self = shared_from_this()](beast::error_code ec) {
        if (ec) return;
        self->on_accept();
      });
      return;
    }
    serve_static();
  }

  void serve_static() {
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(request_.version());
    res->set(http::field::server, "navstack");
    res->keep_alive(false);
    std::string target(request_.target());
    if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
    if (target.empty() || target == "/") target = "/index.html";
    const bool safe = target.find("..") == std::string::npos;
    std::ifstream in;
    std::filesystem::path file;
    if (web_root_ && safe && request_.method() == http::verb::get) {
      file = *web_root_ / target.substr(1);
      std::error_code ec;
      if (std::filesystem::is_regular_file(file, ec)) in.open(file, std::ios::binary);
    }
    if (in.is_open() && in) {
      std::ostringstream body;
      body << in.rdbuf();
      res->result(http::status::ok);
      res->set(http::field::content_type, mime_type(file));
      res->body() = body.str();
    } else {
      res->result(http::status::not_found);
      res->set(http::field::content_type, "text/plain");
      res->body() = "not found\n";
    }
    res->prepare_payload();
    http::async_write(ws_.next_layer(), *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->ws_.next_layer().socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  void on_accept() {
    ws_.text(true);
    std::weak_ptr<WsConnection> weak = shared_from_this();
    auto executor = ws_.get_executor();
    id_ = server_.open_session([weak, executor](const std::string& frame) {
      auto self = weak.lock();
      if (!self || self->closed_) return false;
      net::post(executor, [self, frame] { self->enqueue(frame); });
      return true;
    });
    read_frame();
  }

  void read_frame() {
    ws_.async_read(frame_buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        if (self->id_) self->server_.close_session(*self->id_);
        return;
      }
      const std::string frame = beast::buffers_to_string(self->frame_buffer_.data());
      self->frame_buffer_.consume(self->frame_buffer_.size());
      self->server_.on_frame(*self->id_, frame);
      self->read_frame();
    });
  }

  void enqueue(std::string frame) {
    if (closed_) return;
    outbox_.push_back(std::move(frame));
    if (outbox_.size() == 1) write_next();
  }

  void write_next() {
    ws_.async_write(net::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->outbox_.clear();
        return;
      }
      self->outbox_.pop_front();
      if (!self->outbox_.empty()) self->write_next();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  NavServer& server_;
  std::optional<std::filesystem::path> web_root_;
  beast::flat_buffer buffer_;
  beast::flat_buffer frame_buffer_;
  http::request<http::string_body> request_;
  std::optional<SessionId> id_;
  std::deque<std::string> outbox_;
  std::atomic<bool> closed_{false};
};

}  // namespace ws_detail

/// Accepts connections on `endpoint` (port 0 picks a free port) and hands
/// each one to NavServer as a session. Runs on the caller's io_context.
class WsServer {
 public:
  WsServer(boost::asio::io_context& ioc, NavServer& server, const boost::asio::ip::tcp::endpoint& endpoint,
           std::optional<std::filesystem::path> web_root = std::nullopt)
      : ioc_(ioc), acceptor_(boost::asio::make_strand(ioc)), server_(server), web_root_(std::move(web_root)) {
    acceptor_.open(endpoint.protocol());
    acceptor_.set_option(boost::asio::socket_base::reuse_address(true));
    acceptor_.bind(endpoint);
    acceptor_.listen(boost::asio::socket_base::max_listen_connections);
  }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  void start() { accept(); }

  void stop() {
    boost::asio::post(acceptor_.get_executor(), [this] {
      boost::system::error_code ignored;
      acceptor_.close(ignored);
    });
  }

 private:
  void accept() {
    acceptor_.async_accept(boost::asio::make_strand(ioc_),
                           [this](boost::system::error_code ec, boost::asio::ip::tcp::socket socket) {
                             if (ec) return;  // acceptor closed
                             std::make_shared<ws_detail::WsConnection>(std::move(socket), server_, web_root_)->run();
                             accept();
                           });
  }

  boost::asio::io_context& ioc_;
  boost::asio::ip::tcp::acceptor acceptor_;
  NavServer& server_;
  std::optional<std::filesystem::path> web_root_;
};

}  // namespace navstack
