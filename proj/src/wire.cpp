#include "foamfed/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstring>

#include "foamfed/imageio.hpp"

namespace foamfed {

namespace {

constexpr uint8_t kMagic[4] = {'F', 'F', 'L', '1'};
constexpr uint32_t kMaxTensors = 65536;
constexpr uint8_t kMaxRank = 8;
constexpr uint64_t kMaxElements = 1ull << 26;

void read_exact(Stream& s, uint8_t* buf, size_t n) {
  size_t got = 0;
  while (got < n) {
    size_t r = s.read_some(buf + got, n - got);
    if (r == 0) throw ProtocolError("connection closed mid-frame");
    got += r;
  }
}

}  // namespace

bool is_known_msg_type(uint8_t t) {
  switch (static_cast<MsgType>(t)) {
    case MsgType::kJoinRequest:
    case MsgType::kJoinAck:
    case MsgType::kFitInstruction:
    case MsgType::kFitResult:
    case MsgType::kEvaluateInstruction:
    case MsgType::kEvaluateResult:
    case MsgType::kShutdown:
    case MsgType::kError:
      return true;
    default:
      return false;
  }
}

std::vector<uint8_t> encode_frame(const Frame& f) {
  if (f.payload.size() > kMaxPayload) throw ProtocolError("payload too large");
  std::vector<uint8_t> out;
  out.reserve(kFrameHeaderSize + f.payload.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(static_cast<uint8_t>(f.type));
  uint64_t len = f.payload.size();
  for (int i = 7; i >= 0; --i) out.push_back(static_cast<uint8_t>(len >> (8 * i)));
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  return out;
}

namespace {

// Parses and validates the 13-byte header; returns the payload length.
uint64_t parse_header(const uint8_t* hdr, Frame& out) {
  if (std::memcmp(hdr, kMagic, 4) != 0) throw ProtocolError("bad magic");
  uint8_t type = hdr[4];
  if (!is_known_msg_type(type)) throw ProtocolError("unknown message type");
  uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len = (len << 8) | hdr[5 + i];
  if (len > kMaxPayload) throw ProtocolError("payload length exceeds limit");
  out.type = static_cast<MsgType>(type);
  return len;
}

}  // namespace

Frame decode_frame(const std::vector<uint8_t>& buf) {
  if (buf.size() < kFrameHeaderSize) throw ProtocolError("truncated frame header");
  Frame f;
  uint64_t len = parse_header(buf.data(), f);
  if (buf.size() != kFrameHeaderSize + len) throw ProtocolError("payload length mismatch");
  f.payload.assign(buf.begin() + kFrameHeaderSize, buf.end());
  return f;
}

void write_frame(Stream& s, const Frame& f) {
  std::vector<uint8_t> bytes = encode_frame(f);
  s.write_all(bytes.data(), bytes.size());
}

Frame read_frame(Stream& s) {
  uint8_t hdr[kFrameHeaderSize];
  read_exact(s, hdr, kFrameHeaderSize);
  Frame f;
  uint64_t len = parse_header(hdr, f);
  f.payload.resize(len);
  if (len > 0) read_exact(s, f.payload.data(), len);
  return f;
}

void ByteWriter::u16(uint16_t v) {
  buf_.push_back(static_cast<uint8_t>(v));
  buf_.push_back(static_cast<uint8_t>(v >> 8));
}
void ByteWriter::u32(uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void ByteWriter::u64(uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void ByteWriter::f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<uint64_t>(v)); }

uint8_t ByteReader::u8() {
  if (pos_ + 1 > buf_.size()) throw ProtocolError("payload truncated");
  return buf_[pos_++];
}
uint16_t ByteReader::u16() {
  if (pos_ + 2 > buf_.size()) throw ProtocolError("payload truncated");
  uint16_t v = static_cast<uint16_t>(buf_[pos_]) | static_cast<uint16_t>(buf_[pos_ + 1]) << 8;
  pos_ += 2;
  return v;
}
uint32_t ByteReader::u32() {
  if (pos_ + 4 > buf_.size()) throw ProtocolError("payload truncated");
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | buf_[pos_ + i];
  pos_ += 4;
  return v;
}
uint64_t ByteReader::u64() {
  if (pos_ + 8 > buf_.size()) throw ProtocolError("payload truncated");
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf_[pos_ + i];
  pos_ += 8;
  return v;
}
float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }
void ByteReader::bytes(uint8_t* out, size_t n) {
  if (pos_ + n > buf_.size()) throw ProtocolError("payload truncated");
  std::memcpy(out, buf_.data() + pos_, n);
  pos_ += n;
}
void ByteReader::expect_end() const {
  if (pos_ != buf_.size()) throw ProtocolError("trailing bytes in payload");
}

namespace {

void validate_tensor_name(const std::string& name) {
  if (name.empty()) throw ProtocolError("empty tensor name");
  for (unsigned char ch : name)
    if (ch < 0x20 || ch == 0x7F) throw ProtocolError("control character in tensor name");
}

void write_params(ByteWriter& w, const ModelParams& p) {
  if (p.tensors.size() > kMaxTensors) throw ProtocolError("too many tensors");
  w.u32(static_cast<uint32_t>(p.tensors.size()));
  for (const auto& t : p.tensors) {
    if (t.name.size() > 65535) throw ProtocolError("tensor name too long");
    validate_tensor_name(t.name);
    if (t.shape.size() > kMaxRank) throw ProtocolError("tensor rank too large");
    w.u16(static_cast<uint16_t>(t.name.size()));
    w.bytes(reinterpret_cast<const uint8_t*>(t.name.data()), t.name.size());
    w.u8(0);  // dtype f32
    w.u8(static_cast<uint8_t>(t.shape.size()));
    for (uint32_t d : t.shape) w.u32(d);
    for (float v : t.data) w.f32(v);
  }
}

ModelParams read_params(ByteReader& r) {
  uint32_t count = r.u32();
  if (count > kMaxTensors) throw ProtocolError("too many tensors");
  ModelParams p;
  p.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = r.u16();
    std::string name(name_len, '\0');
    r.bytes(reinterpret_cast<uint8_t*>(name.data()), name_len);
    validate_tensor_name(name);
    uint8_t dtype = r.u8();
    if (dtype != 0) throw ProtocolError("unsupported dtype tag");
    uint8_t rank = r.u8();
    if (rank > kMaxRank) throw ProtocolError("tensor rank too large");
    std::vector<uint32_t> shape(rank);
    uint64_t elems = rank > 0 ? 1 : 0;
    for (auto& d : shape) {
      d = r.u32();
      elems *= d;
      if (elems > kMaxElements) throw ProtocolError("tensor too large");
    }
    if (r.remaining() < elems * 4) throw ProtocolError("payload truncated");
    std::vector<float> data(elems);
    for (auto& v : data) v = r.f32();
    p.tensors.push_back(NamedTensor(std::move(name), std::move(shape), std::move(data)));
  }
  return p;
}

void write_train_config(ByteWriter& w, const TrainConfig& c) {
  w.u32(static_cast<uint32_t>(c.epochs));
  w.u32(static_cast<uint32_t>(c.steps_per_epoch));
  w.u32(static_cast<uint32_t>(c.batch_size));
  w.f64(c.lr);
  w.f64(c.weight_decay);
  w.f64(c.loss.alpha);
  w.f64(c.loss.score_weight);
  w.u64(c.seed);
}

TrainConfig read_train_config(ByteReader& r) {
  TrainConfig c;
  c.epochs = static_cast<int>(r.u32());
  c.steps_per_epoch = static_cast<int>(r.u32());
  c.batch_size = static_cast<int>(r.u32());
  c.lr = r.f64();
  c.weight_decay = r.f64();
  c.loss.alpha = r.f64();
  c.loss.score_weight = r.f64();
  c.seed = r.u64();
  return c;
}

void write_metrics(ByteWriter& w, const RoundMetrics& m) {
  w.f64(m.loss);
  w.f64(m.iou);
  w.f64(m.pixel_accuracy);
  w.f64(m.dice);
}

RoundMetrics read_metrics(ByteReader& r) {
  RoundMetrics m;
  m.loss = r.f64();
  m.iou = r.f64();
  m.pixel_accuracy = r.f64();
  m.dice = r.f64();
  return m;
}

}  // namespace

std::vector<uint8_t> serialize_params(const ModelParams& p) {
  ByteWriter w;
  write_params(w, p);
  return w.take();
}

ModelParams deserialize_params(const std::vector<uint8_t>& buf) {
  ByteReader r(buf);
  ModelParams p = read_params(r);
  r.expect_end();
  return p;
}

void save_checkpoint(const std::string& path, const ModelParams& p) {
  std::vector<uint8_t> bytes = serialize_params(p);
  write_file_atomic(path, bytes.data(), bytes.size());
}

ModelParams load_checkpoint(const std::string& path) {
  return deserialize_params(read_file_bytes(path));
}

std::vector<uint8_t> encode_join_ack(const JoinAckMsg& m) {
  ByteWriter w;
  w.u32(m.client_id);
  return w.take();
}
JoinAckMsg decode_join_ack(const std::vector<uint8_t>& buf) {
  ByteReader r(buf);
  JoinAckMsg m{r.u32()};
  r.expect_end();
  return m;
}

std::vector<uint8_t> encode_fit_instruction(const FitInstructionMsg& m) {
  ByteWriter w;
  w.u32(m.round);
  write_train_config(w, m.config);
  write_params(w, m.params);
  return w.take();
}
FitInstructionMsg decode_fit_instruction(const std::vector<uint8_t>& buf) {
  ByteReader r(buf);
  FitInstructionMsg m;
  m.round = r.u32();
  m.config = read_train_config(r);
  m.params = read_params(r);
  r.expect_end();
  return m;
}

std::vector<uint8_t> encode_fit_result(const FitResultMsg& m) {
  ByteWriter w;
  write_params(w, m.params);
  w.u64(m.n_samples);
  write_metrics(w, m.metrics);
  return w.take();
}
FitResultMsg decode_fit_result(const std::vector<uint8_t>& buf) {
  ByteReader r(buf);
  FitResultMsg m;
  m.params = read_params(r);
  m.n_samples = r.u64();
  m.metrics = read_metrics(r);
  r.expect_end();
  return m;
}

std::vector<uint8_t> encode_evaluate_instruction(const EvaluateInstructionMsg& m) {
  ByteWriter w;
  w.u32(m.round);
  w.u32(m.n_samples);
  write_params(w, m.params);
  return w.take();
}
EvaluateInstructionMsg decode_evaluate_instruction(const std::vector<uint8_t>& buf) {
  ByteReader r(buf);
  EvaluateInstructionMsg m;
  m.round = r.u32();
  m.n_samples = r.u32();
  m.params = read_params(r);
  r.expect_end();
  return m;
}

std::vector<uint8_t> encode_evaluate_result(const EvaluateResultMsg& m) {
  ByteWriter w;
  write_metrics(w, m.metrics);
  w.u64(m.n_samples);
  return w.take();
}
EvaluateResultMsg decode_evaluate_result(const std::vector<uint8_t>& buf) {
  ByteReader r(buf);
  EvaluateResultMsg m;
  m.metrics = read_metrics(r);
  m.n_samples = r.u64();
  r.expect_end();
  return m;
}

std::vector<uint8_t> encode_shutdown(const ShutdownMsg& m) {
  ByteWriter w;
  write_params(w, m.params);
  return w.take();
}
ShutdownMsg decode_shutdown(const std::vector<uint8_t>& buf) {
  ByteReader r(buf);
  ShutdownMsg m;
  m.params = read_params(r);
  r.expect_end();
  return m;
}

std::vector<uint8_t> encode_error(const ErrorMsg& m) {
  ByteWriter w;
  w.u32(static_cast<uint32_t>(m.text.size()));
  w.bytes(reinterpret_cast<const uint8_t*>(m.text.data()), m.text.size());
  return w.take();
}
ErrorMsg decode_error(const std::vector<uint8_t>& buf) {
  ByteReader r(buf);
  uint32_t len = r.u32();
  if (len > buf.size()) throw ProtocolError("payload truncated");
  ErrorMsg m;
  m.text.resize(len);
  r.bytes(reinterpret_cast<uint8_t*>(m.text.data()), len);
  r.expect_end();
  return m;
}

TcpStream::~TcpStream() {
  if (fd_ >= 0) ::close(fd_);
}

size_t TcpStream::read_some(uint8_t* buf, size_t n) {
  while (true) {
    ssize_t r = ::recv(fd_, buf, n, 0);
    if (r >= 0) return static_cast<size_t>(r);
    if (errno == EINTR) continue;
    throw ProtocolError(std::string("recv failed: ") + std::strerror(errno));
  }
}

void TcpStream::write_all(const uint8_t* buf, size_t n) {
  size_t sent = 0;
  while (sent < n) {
    ssize_t r = ::send(fd_, buf + sent, n - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<size_t>(r);
  }
}

void TcpStream::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

std::pair<std::string, int> split_address(const std::string& address) {
  size_t colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size())
    throw std::invalid_argument("address must be host:port");
  int port = 0;
  try {
    size_t pos = 0;
    port = std::stoi(address.substr(colon + 1), &pos);
    if (pos != address.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw std::invalid_argument("invalid port in address: " + address);
  }
  if (port < 0 || port > 65535) throw std::invalid_argument("port out of range");
  return {address.substr(0, colon), port};
}

namespace {

sockaddr_in make_sockaddr(const std::string& host, int port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(port));
  std::string h = host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) != 1)
    throw std::invalid_argument("cannot parse host address: " + host);
  return addr;
}

}  // namespace

TcpListener::TcpListener(const std::string& address) {
  auto [host, port] = split_address(address);
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw std::runtime_error(std::string("socket failed: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = make_sockaddr(host, port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    int err = errno;
    ::close(fd_);
    fd_ = -1;
    throw std::runtime_error(std::string("bind failed: ") + std::strerror(err));
  }
  if (::listen(fd_, 64) < 0) {
    int err = errno;
    ::close(fd_);
    fd_ = -1;
    throw std::runtime_error(std::string("listen failed: ") + std::strerror(err));
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len) == 0)
    port_ = ntohs(bound.sin_port);
}

TcpListener::~TcpListener() { close(); }

std::unique_ptr<TcpStream> TcpListener::accept() {
  while (true) {
    int cfd = ::accept(fd_, nullptr, nullptr);
    if (cfd >= 0) {
      int one = 1;
      ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return std::make_unique<TcpStream>(cfd);
    }
    if (errno == EINTR) continue;
    return nullptr;  // listener closed
  }
}

void TcpListener::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

std::unique_ptr<TcpStream> tcp_connect(const std::string& address) {
  auto [host, port] = split_address(address);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error(std::string("socket failed: ") + std::strerror(errno));
  sockaddr_in addr = make_sockaddr(host, port);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    int err = errno;
    ::close(fd);
    throw std::runtime_error(std::string("connect failed: ") + std::strerror(err));
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_unique<TcpStream>(fd);
}

}  // namespace foamfed
