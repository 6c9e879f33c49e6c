"""Interface/body cell texts for fixture operators used across test modules."""

UTIL_COS_IFACE = """
# access key id
access_key_id = os.environ.get('access_key_id')
# secret access key
secret_access_key = os.environ.get('secret_access_key')
# cos/s3 endpoint
endpoint = os.environ.get('endpoint')
# cos bucket name
bucket_name = os.environ.get('bucket_name')
# path inside the bucket
path = os.environ.get('path', '/')
# list recursively
recursive = bool(os.environ.get('recursive', 'False'))
# operation to perform
operation = os.environ.get('operation', 'ls')
# temporary data folder
data_dir = os.environ.get('data_dir', '../data/')
"""


def util_cos_body(tag: str) -> str:
    return f"print('util-cos {tag}', operation, bucket_name)"


DUMP_IFACE = """
# first value
alpha = os.environ.get('alpha', 'a')
# second value
beta = os.getenv("beta", "b")
# third value
gamma = os.environ.get('gamma', 'c')
# fourth value
delta = os.environ.get('delta', 'd')
# label of the dump file
output_label = os.environ.get('output_label', 'env')
"""

DUMP_BODY = """
import json
with open(os.path.join(os.environ['data_dir'], output_label + '.json'), 'w') as fh:
    json.dump(dict(os.environ), fh, sort_keys=True)
"""

PRINT_DATA_DIR_IFACE = """
# unused knob
knob = os.environ.get('knob', '1')
"""
PRINT_DATA_DIR_BODY = "print(os.environ['data_dir'], end='')"

EXIT_IFACE = """
# exit code to return
code = int(os.environ.get('code', '3'))
"""
EXIT_BODY = "sys.exit(code)"

WRITE_IFACE = """
# file to create in the data dir
output_file = os.environ.get('output_file', 'x.bin')
# number of random bytes
size = int(os.environ.get('size', '65536'))
"""
WRITE_BODY = """
with open(os.path.join(os.environ['data_dir'], output_file), 'wb') as fh:
    fh.write(os.urandom(size))
"""

TRANSFORM_IFACE = """
# file to read
input_file = os.environ.get('input_file')
# file to write
output_file = os.environ.get('output_file', 'y.bin')
"""
TRANSFORM_BODY = """
d = os.environ['data_dir']
data = open(os.path.join(d, input_file), 'rb').read()
open(os.path.join(d, output_file), 'wb').write(bytes(reversed(data)))
"""

VERIFY_IFACE = """
# original file
original = os.environ.get('original')
# transformed file
transformed = os.environ.get('transformed')
"""
VERIFY_BODY = """
d = os.environ['data_dir']
a = open(os.path.join(d, original), 'rb').read()
b = open(os.path.join(d, transformed), 'rb').read()
if bytes(reversed(a)) != b:
    sys.exit('mismatch')
open(os.path.join(d, 'verified'), 'w').write('ok')
"""

CONSUMER_IFACE = """
# operator accepts streamed input
claimed_stream = os.environ.get('claimed_stream', 'true')
# where to store received bytes
output_file = os.environ.get('output_file', 'received.bin')
"""
CONSUMER_BODY = """
import http.server
port = int(os.environ['claimed_stream_port'])
received = []

class Sink(http.server.BaseHTTPRequestHandler):
    def do_PUT(self):
        received.append(self.rfile.read(int(self.headers['Content-Length'])))
        self.send_response(200)
        self.end_headers()

    do_POST = do_PUT

    def log_message(self, *args):
        pass

server = http.server.HTTPServer(('0.0.0.0', port), Sink)
while not received:
    server.handle_request()
server.server_close()
with open(os.path.join(os.environ['data_dir'], output_file), 'wb') as fh:
    fh.write(received[0])
"""

PRODUCER_IFACE = """
# operator produces a stream
claimed_stream = os.environ.get('claimed_stream', 'true')
# file to send
input_file = os.environ.get('input_file', 'payload.bin')
"""
PRODUCER_BODY = """
import urllib.request
with open(os.path.join(os.environ['data_dir'], input_file), 'rb') as fh:
    payload = fh.read()
req = urllib.request.Request(os.environ['claimed_stream_url'], data=payload, method='PUT')
urllib.request.urlopen(req, timeout=30).read()
"""

SILENT_CONSUMER_IFACE = """
# operator accepts streamed input
claimed_stream = os.environ.get('claimed_stream', 'true')
"""
SILENT_CONSUMER_BODY = "import time\ntime.sleep(300)"
