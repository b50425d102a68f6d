import threading
import time

import pytest

from museeg.errors import NetworkUnreachableError
from museeg.mqtt import MiniMqttBroker, MqttClient, topic_matches


@pytest.fixture
def broker():
    b = MiniMqttBroker().start()
    yield b
    b.stop()


def wait_for(predicate, timeout=5.0, interval=0.01):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return False


class TestTopicMatch:
    def test_exact(self):
        assert topic_matches("gaze/p1", "gaze/p1")
        assert not topic_matches("gaze/p1", "gaze/p2")

    def test_plus_wildcard(self):
        assert topic_matches("gaze/+", "gaze/p7")
        assert not topic_matches("gaze/+", "gaze/p7/x")

    def test_hash_wildcard(self):
        assert topic_matches("gaze/#", "gaze/p7/x")
        assert topic_matches("#", "anything/at/all")


class TestClientBroker:
    def test_publish_subscribe_qos1(self, broker):
        got = []
        sub = MqttClient(broker.host, broker.port, "sub1",
                         on_message=lambda t, p: got.append((t, p)))
        sub.connect()
        sub.subscribe("gaze/p1", qos=1)
        pub = MqttClient(broker.host, broker.port, "pub1")
        pub.connect()
        for i in range(5):
            pub.publish("gaze/p1", f"msg{i}".encode(), qos=1)
        assert wait_for(lambda: len(got) == 5)
        assert got[0] == ("gaze/p1", b"msg0")
        sub.disconnect()
        pub.disconnect()

    def test_topic_isolation(self, broker):
        got = []
        sub = MqttClient(broker.host, broker.port, "sub2",
                         on_message=lambda t, p: got.append(t))
        sub.connect()
        sub.subscribe("gaze/p1")
        pub = MqttClient(broker.host, broker.port, "pub2")
        pub.connect()
        pub.publish("gaze/p2", b"x", qos=1)
        pub.publish("gaze/p1", b"y", qos=1)
        assert wait_for(lambda: len(got) == 1)
        time.sleep(0.1)
        assert got == ["gaze/p1"]
        sub.disconnect()
        pub.disconnect()

    def test_unreachable_broker(self):
        client = MqttClient("127.0.0.1", 1, "nope")
        with pytest.raises(NetworkUnreachableError):
            client.connect(timeout=0.5)

    def test_disconnect_callback_on_broker_stop(self, broker):
        dropped = threading.Event()
        sub = MqttClient(broker.host, broker.port, "sub3",
                         on_disconnect=lambda exc: dropped.set())
        sub.connect()
        sub.subscribe("gaze/p1")
        broker.stop()
        assert dropped.wait(5.0)

    def test_qos0_also_delivered(self, broker):
        got = []
        sub = MqttClient(broker.host, broker.port, "sub4",
                         on_message=lambda t, p: got.append(p))
        sub.connect()
        sub.subscribe("a/b", qos=0)
        pub = MqttClient(broker.host, broker.port, "pub4")
        pub.connect()
        pub.publish("a/b", b"hello", qos=0)
        assert wait_for(lambda: got == [b"hello"])
        sub.disconnect()
        pub.disconnect()
