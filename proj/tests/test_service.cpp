#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "crowdlabel/http_service.hpp"
#include "crowdlabel/service.hpp"

using namespace crowdlabel;
using namespace std::chrono_literals;

namespace {

std::vector<GridTask> make_grids(int n) {
  std::vector<GridTask> out;
  for (int i = 0; i < n; ++i) {
    GridTask g;
    g.task_id = "g" + std::to_string(i);
    g.query_label = 0;
    g.shown = {"t" + std::to_string(i), "c" + std::to_string(i)};
    g.controls = {"c" + std::to_string(i)};
    out.push_back(g);
  }
  return out;
}

std::vector<ClassifyTask> make_classify(int n) {
  std::vector<ClassifyTask> out;
  for (int i = 0; i < n; ++i) out.push_back({"c-i" + std::to_string(i), "i" + std::to_string(i), 0, {0, 1}, 9});
  return out;
}

json contains_payload(const std::string& task, const std::string& worker, std::vector<std::string> selected) {
  return json{{"task_id", task}, {"worker", worker}, {"selected", selected}};
}

json classify_payload(const std::string& task, const std::string& worker, std::vector<int> valid, json main) {
  return json{{"task_id", task}, {"worker", worker}, {"valid", valid}, {"main", main}};
}

struct FakeClock {
  std::shared_ptr<std::chrono::steady_clock::time_point> now =
      std::make_shared<std::chrono::steady_clock::time_point>(std::chrono::steady_clock::time_point{} + 1h);
  TaskStore::Clock fn() const {
    auto p = now;
    return [p] { return *p; };
  }
};

int status_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    return e.status();
  }
  return 200;
}

}  // namespace

TEST(TaskStoreTest, LeastAssignedFirstAndNoRepeat) {
  TaskStore store(make_grids(3), {});
  auto a = store.next_task("w1", "contains");
  auto b = store.next_task("w2", "contains");
  auto c = store.next_task("w1", "contains");
  EXPECT_EQ((*a)["task"]["task_id"], "g0");
  EXPECT_EQ((*b)["task"]["task_id"], "g1");
  EXPECT_EQ((*c)["task"]["task_id"], "g2");
  auto d = store.next_task("w1", "contains");
  EXPECT_EQ((*d)["task"]["task_id"], "g1");
  EXPECT_FALSE(store.next_task("w1", "contains").has_value());
  EXPECT_EQ(status_of([&] { store.next_task("w1", "nope"); }), 404);
  EXPECT_EQ(status_of([&] { store.next_task("", "contains"); }), 400);
}

TEST(TaskStoreTest, SubmitValidationAndDuplicates) {
  TaskStore store(make_grids(1), make_classify(1));
  store.next_task("w", "contains");
  EXPECT_EQ(status_of([&] { store.submit(json::array()); }), 400);
  EXPECT_EQ(status_of([&] { store.submit(contains_payload("zz", "w", {})); }), 404);
  EXPECT_EQ(status_of([&] { store.submit(contains_payload("g0", "other", {})); }), 404);
  EXPECT_EQ(status_of([&] { store.submit(contains_payload("g0", "w", {"unshown"})); }), 400);
  EXPECT_EQ(status_of([&] { store.submit(json{{"task_id", "g0"}, {"worker", "w"}}); }), 400);
  EXPECT_EQ(store.submit(contains_payload("g0", "w", {"c0"})).log_size, 1u);
  EXPECT_EQ(status_of([&] { store.submit(contains_payload("g0", "w", {"c0"})); }), 409);

  store.next_task("w", "classify");
  auto ack = store.submit(classify_payload("c-i0", "w", {0}, 1));
  EXPECT_TRUE(ack.qc_flag);
  auto log = store.export_kind("responses").content;
  EXPECT_NE(log.find("\"qc_flag\":true"), std::string::npos);
  EXPECT_NE(log.find("\"stage\":\"classify\""), std::string::npos);
}

TEST(TaskStoreTest, ExpiredLeaseIsRejectedAndReleased) {
  FakeClock clock;
  ServiceConfig cfg;
  cfg.target = 1;
  cfg.lease_timeout = 10s;
  TaskStore store(make_grids(1), {}, cfg, clock.fn());
  ASSERT_TRUE(store.next_task("a", "contains"));
  EXPECT_FALSE(store.next_task("b", "contains"));  // the only slot is leased
  *clock.now += 11s;
  EXPECT_EQ(status_of([&] { store.submit(contains_payload("g0", "a", {})); }), 404);
  EXPECT_TRUE(store.next_task("b", "contains"));
}

TEST(TaskStoreTest, ConcurrentDispatchHonoursTarget) {
  for (int target : {1, 9}) {
    ServiceConfig cfg;
    cfg.target = target;
    TaskStore store(make_grids(5), {}, cfg);
    std::atomic<int> served{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t)
      threads.emplace_back([&, t] {
        for (int w = 0; w < 10; ++w) {
          const auto worker = "t" + std::to_string(t) + "w" + std::to_string(w);
          while (auto task = store.next_task(worker, "contains")) {
            const std::string id = (*task)["task"]["task_id"];
            store.submit(contains_payload(id, worker, {}));
            ++served;
          }
        }
      });
    for (auto& th : threads) th.join();
    EXPECT_EQ(served.load(), 5 * target);
    auto p = store.progress();
    EXPECT_EQ(p["contains"]["responses"], 5 * target);
    EXPECT_EQ(p["contains"]["closed"], 5);
  }
}

TEST(TaskStoreTest, TwoClientsRaceForOneTask) {
  for (int target : {9, 1}) {
    ServiceConfig cfg;
    cfg.target = target;
    TaskStore store(make_grids(1), {}, cfg);
    std::atomic<int> leased{0};
    std::thread a([&] { leased += store.next_task("client-a", "contains").has_value(); });
    std::thread b([&] { leased += store.next_task("client-b", "contains").has_value(); });
    a.join();
    b.join();
    EXPECT_EQ(leased.load(), target == 9 ? 2 : 1) << "target " << target;
  }
}

TEST(TaskStoreTest, ExportsAndAggregation) {
  TaskStore store(make_grids(1), make_classify(2));
  store.set_auto_annotations({auto_annotation("auto-img", 3)});
  EXPECT_EQ(status_of([&] { store.export_kind("annotations"); }), 409);
  EXPECT_EQ(status_of([&] { store.export_kind("bogus"); }), 404);
  for (const char* w : {"a", "b", "c"}) {
    auto t = store.next_task(w, "classify");
    store.submit(classify_payload((*t)["task"]["task_id"], w, {0, 1}, 1));
  }
  auto e1 = store.export_kind("responses");
  auto e2 = store.export_kind("responses");
  EXPECT_EQ(e1.content, e2.content);
  EXPECT_EQ(e1.sha256, sha256_hex(e1.content));
  EXPECT_EQ(store.aggregate(), 3u);
  auto ann = store.annotation("i0");
  ASSERT_TRUE(ann);
  EXPECT_EQ((*ann)["main_label"], 1);
  EXPECT_TRUE(store.annotation("auto-img"));
  EXPECT_FALSE(store.annotation("unknown"));
  EXPECT_NO_THROW(store.export_kind("annotations"));
  EXPECT_NO_THROW(store.export_kind("qc"));
}

TEST(TaskStoreTest, LogReplaySurvivesRestart) {
  auto path = std::filesystem::temp_directory_path() / ("crowdlabel-log-" + std::to_string(::getpid()) + ".jsonl");
  std::filesystem::remove(path);
  ServiceConfig cfg;
  cfg.log_path = path;
  {
    TaskStore store(make_grids(2), {}, cfg);
    store.next_task("w", "contains");
    store.submit(contains_payload("g0", "w", {"c0"}));
  }
  TaskStore again(make_grids(2), {}, cfg);
  EXPECT_EQ(again.log_size(), 1u);
  auto t = again.next_task("w", "contains");
  EXPECT_EQ((*t)["task"]["task_id"], "g1");
  std::filesystem::remove(path);
}

TEST(HttpService, EndToEnd) {
  TaskStore store(make_grids(2), make_classify(1));
  httplib::Server server;
  mount_service(server, store);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto bad = cli.Get("/v1/tasks/next?worker=w");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);

  auto next = cli.Get("/v1/tasks/next?worker=w&stage=contains");
  ASSERT_TRUE(next);
  EXPECT_EQ(next->status, 200);
  auto task = json::parse(next->body);
  EXPECT_EQ(task["task"]["task_id"], "g0");
  EXPECT_EQ(next->get_header_value("Access-Control-Allow-Origin"), "*");

  auto body = contains_payload("g0", "w", {"c0"}).dump();
  auto ok = cli.Post("/v1/responses", body, "application/json");
  ASSERT_TRUE(ok);
  EXPECT_EQ(ok->status, 200);
  auto dup = cli.Post("/v1/responses", body, "application/json");
  EXPECT_EQ(dup->status, 409);
  EXPECT_EQ(cli.Post("/v1/responses", "{not json", "application/json")->status, 400);

  EXPECT_EQ(cli.Get("/v1/export/annotations")->status, 409);
  auto ex = cli.Get("/v1/export/responses");
  EXPECT_EQ(ex->status, 200);
  EXPECT_EQ(ex->get_header_value("X-Content-Hash"), sha256_hex(ex->body));

  auto ct = json::parse(cli.Get("/v1/tasks/next?worker=w&stage=classify")->body);
  EXPECT_EQ(ct["task"]["image"], "i0");
  cli.Post("/v1/responses", classify_payload("c-i0", "w", {0, 1}, 0).dump(), "application/json");
  EXPECT_EQ(cli.Post("/v1/aggregate", "", "application/json")->status, 200);
  auto ann = cli.Get("/v1/annotations/i0");
  EXPECT_EQ(ann->status, 200);
  EXPECT_EQ(json::parse(ann->body)["num_objects"], 2);
  EXPECT_EQ(cli.Get("/v1/annotations/nope")->status, 404);
  auto prog = json::parse(cli.Get("/v1/progress")->body);
  EXPECT_EQ(prog["contains"]["responses"], 1);

  server.stop();
  th.join();
}
