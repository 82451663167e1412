from setuptools import setup, find_packages

setup(
    name="refmod",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={"refmod": ["data/*.csv", "data/*.conf"]},
    install_requires=[
        "click>=8.1.7",
        "click-spinner>=0.1.10",
        "python-dotenv>=1.0.0",
        "networkx>=3.4",
        "numpy>=1.26",
        "shapely>=2.0",
        "pydantic>=2.5",
    ],
    extras_require={
        "dev": ["pytest>=8.0", "pyinstaller>=6.14.2"],
    },
    entry_points={
        "console_scripts": [
            "refmod=refmod.cli:main",
        ],
    },
    python_requires=">=3.10",
    description="Pure pursuit with a TD3-learned steering modification, minimum-curvature planning and evaluation worlds",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering",
    ],
)
