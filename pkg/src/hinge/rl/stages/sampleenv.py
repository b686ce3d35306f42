"""
Sample the door sequence an evaluation with the same seed sees.
"""
from dataclasses import asdict

from hinge.rl.base import BaseStage
from hinge.rl.envdomain import env_hash, write_envparams
from hinge.rl.harness import EVAL_MIN_SPEED, evaluation_doors, evaluation_ranges


class StageRunner(BaseStage):
    """
    Write ``doors.csv`` with one row per door and one ``door_NNN.envparams`` file per door.
    """

    def _run(self):
        episodes = int(self._parameter("episodes", 20))
        ranges = evaluation_ranges(float(self._parameter("eval_min_speed", EVAL_MIN_SPEED)))
        rows = []
        for index, e in enumerate(evaluation_doors(episodes, self._seed, ranges)):
            write_envparams(self._form_full_filename(f"door_{index:03d}.envparams"), e)
            rows.append({"door": index, "env_hash": env_hash(e), **asdict(e)})

        self._write_rows("doors.csv", rows, "sample_env", "doors")
