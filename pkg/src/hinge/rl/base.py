import os

from hinge.rl.config import config_hash, read_config
from hinge.rl.errors import ConfigurationError, HingeError
from hinge.rl.harness import header_block, write_rows_csv
from hinge.rl.logger import HingeLogger


class BaseStage(object):

    def __init__(self, output_target=None):
        self._output_target = output_target
        self._filename = None
        self._parameters = {}
        self._seed = 0

    def set_parameters(self, parameters):
        """
        Set the parameters for this stage, overriding any with the same key read from the configuration.

        :param parameters: A *dict* of parameters.
        """
        self._parameters.update(parameters)

    def set_seed(self, seed):
        self._seed = int(seed)

    def get_parameters(self):
        return dict(self._parameters)

    def run(self, output_target=None):
        if output_target is not None:
            self._output_target = output_target
        if self._output_target is not None:
            os.makedirs(self._output_target, exist_ok=True)

        HingeLogger.getLogger().info(f"{self._name()}: seed {self._seed}, output {self._output_target}")
        self._run()
        HingeLogger.getLogger().info(f"{self._name()}: finished")

    def _run(self):
        raise NotImplementedError()

    def _name(self):
        return type(self).__module__.rsplit(".", 1)[-1]

    def load(self, filename):
        """
        Loads the named run configuration and on success sets filename as the current configuration.
        Parameters already set take precedence over those read.

        :return:  True on success, otherwise False.
        """
        if filename is None:
            return False

        try:
            parameters = read_config(filename)
            parameters.update(self._parameters)
            self._parameters = parameters
            self._filename = filename
            return True
        except HingeError as e:
            HingeLogger.getLogger().error("Failed to load run configuration " + filename + ": " + str(e))
        except Exception as e:
            HingeLogger.getLogger().error("Failed to load run configuration " + filename + ": Unknown error " + str(e))

        return False

    def _parameter(self, key, default=None):
        return self._parameters.get(key, default)

    def _checkpoint(self, key, required=True):
        """
        Path of the checkpoint named by the configuration entry *key*.

        :param required: Raise if the entry is missing or not a file, otherwise return None.
        """
        filename = self._parameter(key)
        if filename is not None and os.path.isfile(filename):
            return filename
        if required:
            raise ConfigurationError(f"{self._name()} needs the {key} checkpoint, got {filename}.")
        return None

    def _header(self, experiment, table, door_hashes=None):
        return header_block(experiment, table, config_hash(self._parameters), self._seed, door_hashes)

    def _write_rows(self, filename, rows, experiment, table):
        full_filename = self._form_full_filename(filename)
        write_rows_csv(full_filename, rows, self._header(experiment, table))
        HingeLogger.getLogger().info(f"Wrote {full_filename}")

    def _form_full_filename(self, filename):
        return filename if self._output_target is None else os.path.join(self._output_target, filename)
