from statops.cli import entrypoint

entrypoint()
