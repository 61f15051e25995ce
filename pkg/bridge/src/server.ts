/**
 * Protocol server: reads decode requests (length-prefixed JSON), answers
 * each with a decode response or an { error } object. One process serves
 * either stdio or TCP; every connection is stateless per request.
 *
 *   node dist/server.js stdio
 *   node dist/server.js tcp [port] [host]
 */

import * as net from 'net';
import { FrameDecoder, encodeFrame } from './protocol';
import { ModelInputError, runDecode } from './model';

export interface Session {
  /** Feed raw bytes; responses go to the write sink. */
  feed(chunk: Buffer): 'open' | 'poisoned';
}

export function createSession(write: (data: Buffer) => void): Session {
  const decoder = new FrameDecoder();
  return {
    feed(chunk: Buffer) {
      if (decoder.poisoned) return 'poisoned';
      for (const frame of decoder.push(chunk)) {
        if (frame.kind === 'garbage') {
          write(encodeFrame({ error: { message: frame.error } }));
          continue;
        }
        write(encodeFrame(answer(frame.value)));
      }
      // an unframeable length header means the rest of the byte stream
      // cannot be trusted; the caller should drop the connection
      return decoder.poisoned ? 'poisoned' : 'open';
    },
  };
}

function answer(request: Record<string, unknown>): object {
  try {
    return runDecode(request);
  } catch (err) {
    if (err instanceof ModelInputError) {
      return { error: { message: err.message } };
    }
    return { error: { message: `internal: ${String(err)}` } };
  }
}

export function serveStdio(): void {
  const session = createSession((data) => process.stdout.write(data));
  process.stdin.on('data', (chunk: Buffer) => {
    if (session.feed(chunk) === 'poisoned') {
      process.stdin.destroy();
      process.exitCode = 1;
    }
  });
  process.stdin.on('end', () => {
    process.exit(process.exitCode ?? 0);
  });
}

export function serveTcp(port: number, host = '127.0.0.1'): net.Server {
  const server = net.createServer((socket) => {
    const session = createSession((data) => socket.write(data));
    socket.on('data', (chunk: Buffer) => {
      if (session.feed(chunk) === 'poisoned') socket.end();
    });
    socket.on('error', () => socket.destroy());
  });
  server.listen(port, host, () => {
    const address = server.address();
    if (address && typeof address === 'object') {
      console.log(`listening on ${address.port}`);
    }
  });
  return server;
}

function main(argv: string[]): void {
  const mode = argv[0];
  if (mode === 'stdio') {
    serveStdio();
  } else if (mode === 'tcp') {
    serveTcp(argv[1] ? Number(argv[1]) : 0,
             argv[2] ?? '127.0.0.1');
  } else {
    console.error('usage: server.js stdio | tcp [port] [host]');
    process.exit(2);
  }
}

if (require.main === module) {
  main(process.argv.slice(2));
}
