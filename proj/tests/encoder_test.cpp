#include <gtest/gtest.h>

#include <atomic>
#include <chrono>

#include "oracle.hpp"
#include "stub_server.hpp"
#include "xmodal/encoder.hpp"
#include "xmodal/synthetic.hpp"

namespace {

using namespace xmodal;
using json = nlohmann::json;

std::vector<std::byte> bytes_of(std::string_view s) {
  auto b = std::as_bytes(std::span(s.data(), s.size()));
  return {b.begin(), b.end()};
}

EncoderErrc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const EncoderError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no EncoderError thrown";
  return EncoderErrc::invalid_input;
}

TEST(MockEncoder, Deterministic) {
  MockEncoder a(17, 64, 4), b(17, 64, 4);
  auto x = a.encode_text("a cow in the room");
  auto y = b.encode_text("a cow in the room");
  EXPECT_EQ(x.global_vec, y.global_vec);
  EXPECT_EQ(x.local_vecs, y.local_vecs);
  EXPECT_EQ(x.local_count(), 4u);
  EXPECT_NEAR(l2_norm(x.global_vec), 1.0, 1e-6);
}

TEST(MockEncoder, WhitespaceIsCanonicalized) {
  MockEncoder e(1, 16, 2);
  EXPECT_EQ(e.encode_text("  a  cow\tin the\nroom ").global_vec,
            e.encode_text("a cow in the room").global_vec);
  EXPECT_EQ(code_of([&] { e.encode_text(" \t "); }), EncoderErrc::invalid_input);
}

TEST(MockEncoder, SeedsAndInputsSeparateOutputs) {
  MockEncoder a(1, 64, 4), b(2, 64, 4);
  EXPECT_NE(a.encode_text("a cow in the room").global_vec,
            b.encode_text("a cow in the room").global_vec);
  EXPECT_NE(a.encode_text("a cow").global_vec, a.encode_text("a dog").global_vec);
}

TEST(MockEncoder, ImageBytesHashLikeText) {
  MockEncoder e(5, 32, 3);
  auto img = e.encode_image(bytes_of("item-3"));
  auto txt = e.encode_text("item-3");
  EXPECT_EQ(img.global_vec, txt.global_vec);
  EXPECT_EQ(img.modality, Modality::image);
  EXPECT_EQ(code_of([&] { e.encode_image({}); }), EncoderErrc::invalid_input);
}

TEST(MockEncoder, NoiseIsDeterministicAndBounded) {
  MockEncoder clean(9, 128, 4), noisy(9, 128, 128, 4, 0.3);
  auto a = noisy.encode_text("a red cow");
  EXPECT_EQ(a.global_vec, noisy.encode_text("a red cow").global_vec);
  double c = cosine(a.global_vec, clean.encode_text("a red cow").global_vec);
  EXPECT_LT(c, 1.0 - 1e-4);
  EXPECT_GT(c, 0.8);
}

TEST(MockEncoder, NoiseFreePairsCoincideWithGeneratedCorpus) {
  SyntheticParams p;
  p.n = 40;
  p.dim = 48;
  p.local_count = 3;
  p.seed = 77;
  auto c = make_synthetic_corpus(p);
  auto enc = synthetic_encoder(p);
  for (ItemId i = 0; i < p.n; ++i) {
    auto q = enc.encode_text(synthetic_key(i));
    EXPECT_NEAR(cosine(q.global_vec, c.descriptions.global.row(i)), 1.0, 1e-5);
    EXPECT_NEAR(cosine(q.global_vec, c.images.global.row(i)), 1.0, 1e-5);
    EXPECT_NEAR(cosine(c.images.global.row(i), c.descriptions.global.row(i)), 1.0, 1e-5);
  }
}

json reply(std::size_t gdim, std::size_t ldim, std::size_t locals = 2) {
  json g = json::array(), l = json::array();
  for (std::size_t i = 0; i < gdim; ++i) g.push_back(i == 0 ? 1.0 : 0.0);
  for (std::size_t r = 0; r < locals; ++r) {
    json v = json::array();
    for (std::size_t i = 0; i < ldim; ++i) v.push_back(i == r ? 1.0 : 0.0);
    l.push_back(v);
  }
  return {{"global", g}, {"locals", l}};
}

TEST(RemoteEncoder, HappyPathText) {
  json seen;
  oracle::StubServer stub([&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    res.set_content(reply(512, 512).dump(), "application/json");
  });
  RemoteEncoder enc(stub.url(), 2000, 512, 512);
  auto q = enc.encode_text("a red cow in the room");
  EXPECT_EQ(seen["modality"], "text");
  EXPECT_EQ(seen["text"], "a red cow in the room");
  EXPECT_EQ(q.global_vec.size(), 512u);
  EXPECT_EQ(q.local_count(), 2u);
  EXPECT_NO_THROW(q.validate());
}

TEST(RemoteEncoder, HappyPathImageIsMultipart) {
  std::string got_modality, got_image;
  oracle::StubServer stub([&](const httplib::Request& req, httplib::Response& res) {
    got_modality = req.get_file_value("modality").content;
    got_image = req.get_file_value("image").content;
    res.set_content(reply(8, 4).dump(), "application/json");
  });
  RemoteEncoder enc(stub.url(), 2000, 8, 4);
  std::string raw("\x89PNG\r\n\x1a\n\0\x01", 10);
  auto q = enc.encode_image(bytes_of(raw));
  EXPECT_EQ(got_modality, "image");
  EXPECT_EQ(got_image, raw);
  EXPECT_EQ(q.modality, Modality::image);
}

TEST(RemoteEncoder, DimMismatch) {
  oracle::StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(reply(511, 512).dump(), "application/json");
  });
  RemoteEncoder enc(stub.url(), 2000, 512, 512);
  EXPECT_EQ(code_of([&] { enc.encode_text("x"); }), EncoderErrc::dim_mismatch);
}

TEST(RemoteEncoder, UnreachableEndpointTimesOut) {
  int port;
  {
    httplib::Server s;
    port = s.bind_to_any_port("127.0.0.1");
  }  // closed again: nothing listens here
  RemoteEncoder enc("http://127.0.0.1:" + std::to_string(port) + "/encode", 300, 4, 4);
  EXPECT_EQ(code_of([&] { enc.encode_text("x"); }), EncoderErrc::timeout);
}

TEST(RemoteEncoder, SlowServerTimesOut) {
  oracle::StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(800));
    res.set_content(reply(4, 4).dump(), "application/json");
  });
  RemoteEncoder enc(stub.url(), 150, 4, 4);
  auto t0 = std::chrono::steady_clock::now();
  EXPECT_EQ(code_of([&] { enc.encode_text("x"); }), EncoderErrc::timeout);
  auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(ms, 700);
}

TEST(RemoteEncoder, StatusCodesAreDistinct) {
  std::atomic<int> status{500};
  oracle::StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    res.status = status.load();
    res.set_content("nope", "text/plain");
  });
  RemoteEncoder enc(stub.url(), 2000, 4, 4);
  try {
    enc.encode_text("x");
    FAIL();
  } catch (const EncoderError& e) {
    EXPECT_EQ(e.code(), EncoderErrc::http_status);
    EXPECT_EQ(e.http_status(), 500);
  }
  status = 415;
  EXPECT_EQ(code_of([&] { enc.encode_image(bytes_of("junk")); }), EncoderErrc::unsupported_input);
}

TEST(RemoteEncoder, MalformedReplies) {
  std::atomic<int> which{0};
  const std::vector<std::string> bodies = {
      "not json", "[1,2,3]", R"({"global": [1,0,0,0]})",
      R"({"global": [1,0,0,"a"], "locals": [[1,0,0,0]]})",
      R"({"global": [1,0,0,0], "locals": []})", R"({"global": [0,0,0,0], "locals": [[1,0,0,0]]})",
      R"({"global": [1,0,0,1e39], "locals": [[1,0,0,0]]})"};
  oracle::StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(bodies[std::size_t(which.load())], "application/json");
  });
  RemoteEncoder enc(stub.url(), 2000, 4, 4);
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    which = int(i);
    EXPECT_EQ(code_of([&] { enc.encode_text("x"); }), EncoderErrc::malformed_response) << bodies[i];
  }
}

TEST(RemoteEncoder, RejectsBadUrls) {
  EXPECT_EQ(code_of([] { RemoteEncoder("https://x/encode", 100, 4, 4); }),
            EncoderErrc::invalid_input);
  EXPECT_EQ(code_of([] { RemoteEncoder("http:///encode", 100, 4, 4); }), EncoderErrc::invalid_input);
}

}  // namespace
