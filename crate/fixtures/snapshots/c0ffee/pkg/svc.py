class Svc:
    """Reads a record count from a data file."""

    def __init__(self, path):
        self.path = path

    def run(self):
        with open(self.path) as fh:
            lines = fh.readlines()
        return len(lines)

    def describe(self):
        return "svc at " + self.path
