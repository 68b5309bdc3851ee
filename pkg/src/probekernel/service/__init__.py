from .app import ProbeTCPServer, create_app, serve, start_tcp_server

__all__ = ["ProbeTCPServer", "create_app", "serve", "start_tcp_server"]
