"""
Record of what a CLI run read and wrote, plus the atomic file writers the
CLI uses for every output.
"""

import hashlib
import json
import logging
import os
import tempfile

logger = logging.getLogger(__name__)

TOOL_VERSION = '1.0.0'
MANIFEST_NAME = 'manifest.json'
CSV_FLOAT_FORMAT = '%.10g'


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_json(path, data):
    """Write data as sorted, indented JSON; replaces the file in one step."""
    _atomic_write(path, json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + '\n')
    return path


def write_csv(path, frame):
    _atomic_write(path, frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT,
                                     lineterminator='\n'))
    return path


def file_digest(path):
    """sha256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


class RunManifest:
    def __init__(self, out_dir, subcommand):
        self.manifest_file = os.path.join(out_dir, MANIFEST_NAME)
        self.data = {'subcommand': subcommand, 'tool_version': TOOL_VERSION,
                     'inputs': {}, 'outputs': {}, 'seeds': {}, 'config': {}}

    def _save_data(self):
        write_json(self.manifest_file, self.data)

    def add_input(self, path):
        self.data['inputs'][os.path.basename(path)] = file_digest(path)

    def add_output(self, path):
        self.data['outputs'][os.path.basename(path)] = file_digest(path)

    def set_seed(self, name, seed):
        self.data['seeds'][name] = seed

    def set_config(self, config):
        self.data['config'] = config

    def save(self):
        self._save_data()
        logger.info("Wrote manifest %s", self.manifest_file)
        return self.manifest_file

