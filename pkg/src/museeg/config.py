"""Service configuration: JSON file plus CLI-flag overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


@dataclass
class ParticipantConfig:
    id: str
    group: str = ""
    udp_port: int = 5000
    mqtt_topic: Optional[str] = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "group": self.group, "udp_port": self.udp_port}
        if self.mqtt_topic:
            d["mqtt_topic"] = self.mqtt_topic
        return d


@dataclass
class AppConfig:
    out_dir: str = "recordings"
    session_id: str = "session"
    sample_rate: float = 256.0
    clock_mode: str = "sync"
    udp_base_port: int = 5000
    ws_port: int = 8765
    mqtt_url: Optional[str] = None  # "host:port"
    participants: list[ParticipantConfig] = field(default_factory=list)
    address_map: Optional[dict] = None
    baseline_eo_seconds: float = 60.0
    baseline_ec_seconds: float = 60.0

    def __post_init__(self):
        if not self.participants:
            self.participants = [
                ParticipantConfig(id="p1", group="ImmersiveGroup",
                                  udp_port=self.udp_base_port,
                                  mqtt_topic="gaze/p1"),
                ParticipantConfig(id="p2", group="DisplayGroup",
                                  udp_port=self.udp_base_port + 1,
                                  mqtt_topic="gaze/p2"),
            ]

    @property
    def mqtt_host_port(self) -> Optional[tuple[str, int]]:
        if not self.mqtt_url:
            return None
        host, _, port = self.mqtt_url.partition(":")
        return host, int(port) if port else 1883


def load_config(path: Optional[str] = None, **overrides) -> AppConfig:
    data: dict = {}
    if path:
        with open(Path(path)) as fh:
            data = json.load(fh)
    participants = [
        ParticipantConfig(**p) for p in data.pop("participants", [])
    ]
    known = {k: v for k, v in data.items() if k in AppConfig.__dataclass_fields__}
    cfg = AppConfig(participants=participants, **known)
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg
