"""Entry point for the demo service."""

from pkg.svc import Svc


def run(path):
    svc = Svc(path)
    return svc.run()
