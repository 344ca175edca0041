#!/usr/bin/env python3
"""
Camera Capture Scheduler

Real-clock frame source for the threaded pipeline. An APScheduler interval
job fires every camera period T_cam, pulls the next raster from a frame
source and hands a Frame to the safety thread's callback.

Features:
    - Interval job at T_cam = 1000 / fps milliseconds
    - Monotonic capture timestamps relative to start
    - Exhaustion callback when the source runs dry
    - Status reporting
"""

import logging
import threading
import time
from datetime import datetime
from typing import Callable, Dict, Iterable, Iterator, Optional

import numpy as np
from apscheduler.schedulers.background import BackgroundScheduler
from apscheduler.triggers.interval import IntervalTrigger

from detectors import Frame

logger = logging.getLogger(__name__)

JOB_ID = 'camera_capture'


class CaptureScheduler:
    """Drives a frame source at camera rate."""

    def __init__(self, source: Iterable, fps: float,
                 on_frame: Callable[[Frame], None],
                 on_exhausted: Optional[Callable[[], None]] = None):
        """
        Initialize the CaptureScheduler.

        Args:
            source: Iterable of rasters or Frames
            fps: Camera rate in frames per second
            on_frame: Called from the scheduler thread with every captured Frame
            on_exhausted: Called once when the source has no more frames
        """
        if fps <= 0:
            raise ValueError(f"fps must be > 0, got {fps}")
        self.fps = fps
        self.t_cam_ms = 1000.0 / fps
        self._source: Iterator = iter(source)
        self.on_frame = on_frame
        self.on_exhausted = on_exhausted
        self.scheduler = BackgroundScheduler()
        self.frames_captured = 0
        self._start_time: Optional[float] = None
        self._exhausted = threading.Event()
        self._lock = threading.Lock()
        logger.info(f"Initialized CaptureScheduler at {fps} fps (T_cam={self.t_cam_ms:.1f} ms)")

    def _capture_tick(self):
        """Pull one frame from the source and deliver it"""
        with self._lock:
            if self._exhausted.is_set():
                return
            try:
                item = next(self._source)
            except StopIteration:
                logger.info(f"Frame source exhausted after {self.frames_captured} frames")
                self._exhausted.set()
                if self.on_exhausted:
                    self.on_exhausted()
                return
            t_capture = (time.monotonic() - self._start_time) * 1000.0
            if isinstance(item, Frame):
                frame = Frame(item.raster, self.frames_captured, t_capture, item.annotations)
            else:
                frame = Frame(np.asarray(item), self.frames_captured, t_capture)
            self.frames_captured += 1

        try:
            self.on_frame(frame)
        except Exception as e:
            logger.error(f"Error delivering frame {frame.t_index}: {str(e)}")

    def start(self) -> bool:
        if self.is_running():
            logger.warning("Capture scheduler is already running")
            return False
        self._start_time = time.monotonic()
        self.scheduler.add_job(
            self._capture_tick,
            trigger=IntervalTrigger(seconds=self.t_cam_ms / 1000.0),
            id=JOB_ID,
            name='Camera Capture',
            max_instances=1,
            coalesce=True,
            next_run_time=datetime.now(),
        )
        self.scheduler.start()
        logger.info("Capture scheduler started")
        return True

    def stop(self) -> bool:
        was_running = self.scheduler.running
        if was_running:
            self.scheduler.shutdown(wait=False)
            logger.info(f"Capture scheduler stopped after {self.frames_captured} frames")
        return was_running

    def is_running(self) -> bool:
        return bool(self.scheduler.running)

    def wait_exhausted(self, timeout: Optional[float] = None) -> bool:
        """Block until the source is exhausted; returns False on timeout."""
        return self._exhausted.wait(timeout)

    def status(self) -> Dict:
        status = {
            "running": self.is_running(),
            "fps": self.fps,
            "t_cam_ms": self.t_cam_ms,
            "frames_captured": self.frames_captured,
            "exhausted": self._exhausted.is_set(),
            "job_info": None,
        }
        if self.scheduler.running:
            job = self.scheduler.get_job(JOB_ID)
            if job:
                status["job_info"] = {
                    "next_run": job.next_run_time.isoformat() if job.next_run_time else None,
                    "pending": job.pending,
                }
        return status


def format_status_output(status: Dict) -> str:
    lines = [
        f"Capture: {'running' if status['running'] else 'stopped'}",
        f"  Rate: {status['fps']:g} fps (T_cam {status['t_cam_ms']:.1f} ms)",
        f"  Frames captured: {status['frames_captured']}",
        f"  Source exhausted: {'yes' if status['exhausted'] else 'no'}",
    ]
    if status.get('job_info') and status['job_info'].get('next_run'):
        lines.append(f"  Next capture: {status['job_info']['next_run']}")
    return '\n'.join(lines)
