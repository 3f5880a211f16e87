"""
Ledger for sweep runs
SQLite record of sweeps, per-cell/per-seed status and metrics, and an activity log
"""

import json
import sqlite3
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
import logging

logger = logging.getLogger(__name__)


class SweepLedger:
    """Sweep bookkeeping next to the aggregated CSVs"""

    def __init__(self, db_path: Union[str, Path] = "sweep.db"):
        self.db_path = str(db_path)
        self.init_database()

    def _connect(self) -> sqlite3.Connection:
        return sqlite3.connect(self.db_path)

    def init_database(self):
        """Initialize database tables"""
        conn = self._connect()
        cursor = conn.cursor()

        # Sweeps table
        cursor.execute("""
            CREATE TABLE IF NOT EXISTS sweeps (
                sweep_id TEXT PRIMARY KEY,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                name TEXT,
                spec TEXT,
                total_cells INTEGER,
                status TEXT,
                finished_at TIMESTAMP
            )
        """)

        # One row per (cell, seed)
        cursor.execute("""
            CREATE TABLE IF NOT EXISTS cell_runs (
                run_id INTEGER PRIMARY KEY AUTOINCREMENT,
                sweep_id TEXT,
                cell_index INTEGER,
                seed INTEGER,
                overrides TEXT,
                status TEXT,
                metrics TEXT,
                error TEXT,
                elapsed REAL,
                recorded_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                FOREIGN KEY (sweep_id) REFERENCES sweeps(sweep_id)
            )
        """)

        # Activity logs table
        cursor.execute("""
            CREATE TABLE IF NOT EXISTS activity_logs (
                log_id INTEGER PRIMARY KEY AUTOINCREMENT,
                timestamp TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                sweep_id TEXT,
                action TEXT,
                status TEXT,
                details TEXT
            )
        """)

        conn.commit()
        conn.close()
        logger.debug(f"Ledger initialized at {self.db_path}")

    def start_sweep(self, sweep_id: str, name: str, spec: Dict[str, Any], total_cells: int):
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute("""
            INSERT OR REPLACE INTO sweeps (sweep_id, name, spec, total_cells, status)
            VALUES (?, ?, ?, ?, ?)
        """, (sweep_id, name, json.dumps(spec), total_cells, "running"))
        conn.commit()
        conn.close()
        self.log_activity(sweep_id, "start", "running", f"{total_cells} cells")

    def record_cell(
        self,
        sweep_id: str,
        cell_index: int,
        seed: int,
        overrides: Dict[str, Any],
        status: str,
        metrics: Optional[Dict[str, Any]] = None,
        error: str = "",
        elapsed: float = 0.0,
    ):
        """Save the outcome of one seed of one cell"""
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute("""
            INSERT INTO cell_runs (sweep_id, cell_index, seed, overrides, status, metrics, error, elapsed)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?)
        """, (sweep_id, cell_index, seed, json.dumps(overrides), status,
              json.dumps(metrics or {}), error, elapsed))
        conn.commit()
        conn.close()

    def finish_sweep(self, sweep_id: str, status: str):
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute("""
            UPDATE sweeps SET status = ?, finished_at = CURRENT_TIMESTAMP WHERE sweep_id = ?
        """, (status, sweep_id))
        conn.commit()
        conn.close()
        self.log_activity(sweep_id, "finish", status)

    def log_activity(self, sweep_id: str, action: str, status: str, details: str = ""):
        """Log activity"""
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute("""
            INSERT INTO activity_logs (sweep_id, action, status, details)
            VALUES (?, ?, ?, ?)
        """, (sweep_id, action, status, details))
        conn.commit()
        conn.close()

    def get_cell_runs(self, sweep_id: str) -> List[Dict[str, Any]]:
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute("""
            SELECT cell_index, seed, overrides, status, metrics, error, elapsed
            FROM cell_runs
            WHERE sweep_id = ?
            ORDER BY cell_index, seed
        """, (sweep_id,))
        rows = cursor.fetchall()
        conn.close()

        return [{
            'cell_index': row[0],
            'seed': row[1],
            'overrides': json.loads(row[2]),
            'status': row[3],
            'metrics': json.loads(row[4]),
            'error': row[5],
            'elapsed': row[6],
        } for row in rows]

    def get_sweep(self, sweep_id: str) -> Optional[Dict[str, Any]]:
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute("""
            SELECT sweep_id, created_at, name, total_cells, status, finished_at
            FROM sweeps WHERE sweep_id = ?
        """, (sweep_id,))
        row = cursor.fetchone()
        conn.close()

        if row:
            return {
                'sweep_id': row[0],
                'created_at': row[1],
                'name': row[2],
                'total_cells': row[3],
                'status': row[4],
                'finished_at': row[5],
            }
        return None

    def list_sweeps(self) -> List[str]:
        """Sweep ids, oldest first"""
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute("SELECT sweep_id FROM sweeps ORDER BY created_at, sweep_id")
        rows = cursor.fetchall()
        conn.close()
        return [row[0] for row in rows]

    def get_activity(self, sweep_id: str) -> List[Dict[str, Any]]:
        conn = self._connect()
        cursor = conn.cursor()
        cursor.execute("""
            SELECT timestamp, action, status, details
            FROM activity_logs
            WHERE sweep_id = ?
            ORDER BY log_id
        """, (sweep_id,))
        rows = cursor.fetchall()
        conn.close()

        return [{
            'timestamp': row[0],
            'action': row[1],
            'status': row[2],
            'details': row[3],
        } for row in rows]

    def get_stats(self) -> Dict[str, int]:
        """Get ledger statistics"""
        conn = self._connect()
        cursor = conn.cursor()

        cursor.execute("SELECT COUNT(*) FROM sweeps")
        total_sweeps = cursor.fetchone()[0]

        cursor.execute("SELECT COUNT(*) FROM cell_runs")
        total_runs = cursor.fetchone()[0]

        cursor.execute("SELECT COUNT(*) FROM cell_runs WHERE status = 'failed'")
        failed_runs = cursor.fetchone()[0]

        cursor.execute("SELECT COUNT(*) FROM activity_logs")
        total_logs = cursor.fetchone()[0]

        conn.close()

        return {
            'total_sweeps': total_sweeps,
            'total_runs': total_runs,
            'failed_runs': failed_runs,
            'total_logs': total_logs,
        }
