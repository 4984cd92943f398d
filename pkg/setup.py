import os
import sys
from setuptools import setup, find_packages
from setuptools.command.install import install
import imisac

VERSION = imisac.__version__
EXPECTED_TAG = imisac.__release_tag__


class VerifyVersionCommand(install):
    """
    Refuse to release unless the git tag of the build names this version.
    """

    description = "verify that the git tag matches our version"

    def run(self):
        tag = os.getenv("GITHUB_REF", "NO GITHUB TAG!").replace("refs/tags/", "")

        if tag != EXPECTED_TAG:
            info = "Git tag: {} does not match the expected release tag: {}".format(
                tag, EXPECTED_TAG
            )
            sys.exit(info)


setup(
    name="imisac",
    version=VERSION,
    description="Intelligent-metasurface transceivers for integrated sensing and communication",
    classifiers=[
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering",
        "License :: OSI Approved :: Apache Software License",
        "Programming Language :: Python :: 3.10",
    ],
    packages=find_packages(exclude=["*.tests", "*.tests.*", "tests.*", "tests"]),
    zip_safe=False,
    install_requires=[
        "numpy>=1.23.5",
        "pyyaml>=3.1.0",
        "filelock>=3.4.0",
    ],
    python_requires=">=3.10",
    entry_points={"console_scripts": ["imisac-run=imisac.runner:main"]},
    cmdclass={"verify": VerifyVersionCommand},  # type: ignore
)
