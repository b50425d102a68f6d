"""Command-line entry points: record, simulate, analyze, report."""

from __future__ import annotations

import json
import signal
import sys
import time
from pathlib import Path

import click

from .analysis import (
    analyze_session,
    compare_modalities,
    load_records_csv,
    write_records_csv,
    write_rejections_jsonl,
    write_report,
)
from .config import load_config
from .ingest import IngestService
from .live import LiveBroadcaster
from .synth import GeneratorSpec, ScriptedPhase, generate, replay, run_scripted_session


@click.group()
def main():
    """Wearable-EEG acquisition and engagement analytics."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON config file")
@click.option("--out", "out_dir", default=None, help="output directory")
@click.option("--udp-port", type=int, default=None,
              help="base UDP port (participants bind consecutive ports)")
@click.option("--mqtt-url", default=None, help="gaze broker, host:port")
@click.option("--ws-port", type=int, default=None, help="live WebSocket port")
@click.option("--session-id", default=None)
@click.option("--clock-mode", type=click.Choice(["sync", "device"]), default=None)
def record(config_path, out_dir, udp_port, mqtt_url, ws_port, session_id, clock_mode):
    """Run the acquisition service until interrupted; finalize on exit."""
    cfg = load_config(config_path, out_dir=out_dir, mqtt_url=mqtt_url,
                      ws_port=ws_port, session_id=session_id, clock_mode=clock_mode)
    if udp_port is not None:
        for i, p in enumerate(cfg.participants):
            p.udp_port = udp_port + i
    mqtt = cfg.mqtt_host_port
    service = IngestService(
        out_dir=cfg.out_dir,
        participants=[p.to_dict() for p in cfg.participants],
        session_id=cfg.session_id,
        sample_rate=cfg.sample_rate,
        clock_mode=cfg.clock_mode,
        address_map=cfg.address_map,
        mqtt_host=mqtt[0] if mqtt else None,
        mqtt_port=mqtt[1] if mqtt else 1883,
    )
    service.start()
    broadcaster = LiveBroadcaster(service, host="0.0.0.0", port=cfg.ws_port).start()
    for p in cfg.participants:
        click.echo(f"listening: {p.id} on udp/{service.udp_port(p.id)}")
    click.echo(f"live dashboard endpoint: {broadcaster.url}")
    stop = []
    signal.signal(signal.SIGINT, lambda *a: stop.append(1))
    signal.signal(signal.SIGTERM, lambda *a: stop.append(1))
    while not stop:
        time.sleep(0.2)
    click.echo("finalizing ...")
    broadcaster.stop()
    manifest = service.stop()
    click.echo(f"manifest: {Path(cfg.out_dir) / 'manifest.json'}")
    for sid, count in sorted(manifest.row_counts.items()):
        click.echo(f"  {sid}: {count} rows")


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True), required=True,
              help="generator spec JSON (single phase) or scripted session JSON")
@click.option("--target", default="127.0.0.1:5000", help="ingest host:port")
@click.option("--rate", type=float, default=1.0,
              help="real-time multiplier; 0 = as fast as possible")
@click.option("--latency-ms", type=(float, float), default=(0.0, 0.0),
              help="injected latency range, milliseconds")
@click.option("--mqtt-url", default=None, help="gaze broker host:port")
@click.option("--mqtt-topic", default=None)
@click.option("--ws-url", default=None,
              help="ingest live endpoint for block commands (scripted specs)")
@click.option("--seed", type=int, default=0)
def simulate(spec_path, target, rate, latency_ms, mqtt_url, mqtt_topic, ws_url, seed):
    """Generate synthetic tracks and replay them over the wire."""
    host, _, port = target.partition(":")
    udp_port = int(port or 5000)
    with open(spec_path) as fh:
        data = json.load(fh)
    latency = (latency_ms[0] / 1000.0, latency_ms[1] / 1000.0)
    mqtt_host = mqtt_port = None
    if mqtt_url:
        mh, _, mp = mqtt_url.partition(":")
        mqtt_host, mqtt_port = mh, int(mp or 1883)

    if "phases" in data:
        phases = [
            ScriptedPhase(label=ph["label"], spec=GeneratorSpec.from_json(ph["spec"]))
            for ph in data["phases"]
        ]
        command = _ws_command(ws_url) if ws_url else _noop_command
        summaries = run_scripted_session(
            phases, host, udp_port, command, rate=rate,
            latency_range_s=latency, seed=seed,
            mqtt_host=mqtt_host, mqtt_port=mqtt_port or 1883, mqtt_topic=mqtt_topic,
        )
        sent = sum(s.datagrams_sent for s in summaries)
        frames = sum(s.eeg_frames for s in summaries)
    else:
        session = generate(GeneratorSpec.from_json(data))
        summary = replay(
            session, host, udp_port, rate=rate, latency_range_s=latency, seed=seed,
            mqtt_host=mqtt_host, mqtt_port=mqtt_port or 1883, mqtt_topic=mqtt_topic,
        )
        sent, frames = summary.datagrams_sent, summary.eeg_frames
        click.echo(
            f"latency injected: min {summary.latency_min_s*1000:.1f} ms, "
            f"mean {summary.latency_mean_s*1000:.1f} ms, "
            f"max {summary.latency_max_s*1000:.1f} ms"
        )
    click.echo(f"sent {sent} datagrams, {frames} EEG frames")


def _noop_command(ctype, label=None, participant=None, t_ref=None):
    return {"ok": True}


def _ws_command(ws_url):
    from websockets.sync.client import connect

    conn = connect(ws_url)

    def command(ctype, label=None, participant=None, t_ref=None):
        conn.send(json.dumps({"type": ctype, "label": label,
                              "participant": participant}))
        while True:
            msg = json.loads(conn.recv(timeout=10))
            if msg.get("type") == "ack":
                return msg

    return command


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--out", "records_path", default="records.csv")
@click.option("--report", "report_path", default="report.json")
@click.option("--rejections", "rejections_path", default="rejections.jsonl")
@click.option("--ica-seed", type=int, default=0)
@click.option("--no-ica", is_flag=True, default=False)
def analyze(manifest, records_path, report_path, rejections_path, ica_seed, no_ica):
    """Run the offline pipeline over a recorded session."""
    result = analyze_session(manifest, ica_seed=ica_seed, use_ica=not no_ica)
    write_records_csv(result.records + result.aggregates, records_path)
    write_rejections_jsonl(result.log, rejections_path)
    report_data = compare_modalities(result.aggregates)
    write_report(report_data, report_path)
    click.echo(
        f"segments: {result.segments_accepted}/{result.segments_total} accepted; "
        f"{len(result.records)} block records, {len(result.aggregates)} aggregates"
    )
    click.echo(f"records: {records_path}")
    click.echo(f"report:  {report_path}")
    for c in report_data["contrasts"]:
        if "p" in c:
            click.echo(f"  {c['name']}: p={c['p']:.4f} [{c['label']}]")


@main.command()
@click.argument("records", type=click.Path(exists=True))
@click.option("--out", "report_path", default="report.json")
def report(records, report_path):
    """Contrasts only, from an existing records CSV (aggregate rows)."""
    recs = load_records_csv(records)
    # aggregate rows carry ":agg" segment ids; fall back to all rows
    aggregates = [r for r in recs if r.segment_id.endswith(":agg")] or recs
    report_data = compare_modalities(aggregates)
    write_report(report_data, report_path)
    click.echo(f"report: {report_path}")
    for c in report_data["contrasts"]:
        if "p" in c:
            click.echo(f"  {c['name']}: p={c['p']:.4f} [{c['label']}]")


if __name__ == "__main__":
    main()
