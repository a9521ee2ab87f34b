"""
Setup script for Crowd Label Fusion.
"""

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="crowd-label-fusion",
    version="0.1.0",
    author="Arthur Sarazin",
    description="Image-aware fusion of crowd-sourced cell segmentations",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests"]),
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.8",
    install_requires=[
        "pyyaml>=5.4.0",
        "numpy>=1.22",
        "scipy>=1.9",
        "scikit-image>=0.19",
        "Pillow>=9.1",
        "pandas>=1.5",
    ],
    extras_require={
        "test": ["pytest>=7.0"],
    },
    entry_points={
        "console_scripts": [
            "crowdfuse=src.cli.main:main",
        ],
    },
)
